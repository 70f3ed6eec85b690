//! Aggregation of demonstrations and synthesized trajectories into a
//! weighted behavior-cloning dataset.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{Action, Observation, SegmentLabel, Trajectory};

pub const DEFAULT_HISTORY: usize = 10;

/// Previous action recorded before the first step of an episode.
pub const NO_ACTION: [i32; 7] = [0; 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Demo,
    Rollout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Every sample counts equally.
    Bc,
    /// Only demonstrations and interventions.
    HgDagger,
    /// Interventions up-weighted.
    Iwr,
    /// Interventions up-weighted and pre-intervention samples down-weighted.
    Sirius,
    /// Sirius weights over relabeled pre-intervention targets.
    OlafSirius,
}

impl WeightScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bc => "bc",
            Self::HgDagger => "hg_dagger",
            Self::Iwr => "iwr",
            Self::Sirius => "sirius",
            Self::OlafSirius => "olaf_sirius",
        }
    }
}

impl std::str::FromStr for WeightScheme {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bc" => Ok(Self::Bc),
            "hg_dagger" => Ok(Self::HgDagger),
            "iwr" => Ok(Self::Iwr),
            "sirius" => Ok(Self::Sirius),
            "olaf_sirius" => Ok(Self::OlafSirius),
            other => Err(CoreError::Parameter(format!("unknown weighting scheme {other:?}"))),
        }
    }
}

/// Weight magnitudes for the intervention-aware schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    /// Weight of intervention samples (> 1).
    pub intervention: f64,
    /// Weight of pre-intervention samples under the Sirius schemes (< 1).
    pub pre_intervention: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self { intervention: 2.0, pre_intervention: 0.1 }
    }
}

/// Observations of one trajectory with the action executed before each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub observations: Vec<Observation>,
    /// `prev_actions[j]` is the action executed just before `observations[j]`.
    pub prev_actions: Vec<[i32; 7]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub episode: usize,
    /// Index of the current observation within the episode.
    pub t: usize,
    pub target: Action,
    pub weight: f64,
    pub label: SegmentLabel,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDataset {
    pub episodes: Vec<Episode>,
    pub samples: Vec<WeightedSample>,
    pub scheme: WeightScheme,
    pub history_len: usize,
}

/// One history entry in the exported sample format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub obs: Observation,
    pub prev_action: [i32; 7],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    history: Vec<HistoryEntry>,
    target: Action,
    weight: f64,
    label: SegmentLabel,
    source: Source,
}

fn episode_of(traj: &Trajectory) -> Episode {
    let observations: Vec<Observation> = traj.steps.iter().map(|s| s.obs.clone()).collect();
    let prev_actions = std::iter::once(NO_ACTION)
        .chain(traj.steps.iter().take(traj.steps.len().saturating_sub(1)).map(|s| s.executed_action().to_array()))
        .collect();
    Episode { observations, prev_actions }
}

/// Builds the aggregated dataset with unit weights: one sample per step.
pub fn aggregate(demos: &[Trajectory], synthesized: &[Trajectory], history_len: usize) -> Result<WeightedDataset> {
    if history_len == 0 {
        return Err(CoreError::Parameter("history length must be positive".into()));
    }
    if demos.is_empty() && synthesized.is_empty() {
        return Err(CoreError::Parameter("nothing to aggregate".into()));
    }
    let mut episodes = Vec::with_capacity(demos.len() + synthesized.len());
    let mut samples = Vec::new();
    let tagged = demos.iter().map(|t| (t, Source::Demo)).chain(synthesized.iter().map(|t| (t, Source::Rollout)));
    for (traj, source) in tagged {
        if traj.steps.is_empty() {
            return Err(CoreError::Parameter(format!("trajectory {}/{} has no steps", traj.task, traj.seed)));
        }
        let labels = if traj.labels.len() == traj.steps.len() {
            traj.labels.clone()
        } else {
            crate::segment::segment_trajectory(traj, traj.window.max(1))?
        };
        let episode = episodes.len();
        for (t, step) in traj.steps.iter().enumerate() {
            let label = if source == Source::Demo { SegmentLabel::Nominal } else { labels[t] };
            samples.push(WeightedSample { episode, t, target: step.action, weight: 1.0, label, source });
        }
        episodes.push(episode_of(traj));
    }
    Ok(WeightedDataset { episodes, samples, scheme: WeightScheme::Bc, history_len })
}

/// Weight of one sample under `scheme`.
pub fn weight_for(scheme: WeightScheme, params: &WeightParams, label: SegmentLabel, source: Source) -> f64 {
    let intervention = source == Source::Rollout && label == SegmentLabel::Intervention;
    let pre = source == Source::Rollout && label == SegmentLabel::PreIntervention;
    match scheme {
        WeightScheme::Bc => 1.0,
        WeightScheme::HgDagger => {
            if source == Source::Demo || intervention {
                1.0
            } else {
                0.0
            }
        }
        WeightScheme::Iwr => {
            if intervention {
                params.intervention
            } else {
                1.0
            }
        }
        WeightScheme::Sirius | WeightScheme::OlafSirius => {
            if intervention {
                params.intervention
            } else if pre {
                params.pre_intervention
            } else {
                1.0
            }
        }
    }
}

/// Reweights every sample. Sample count, targets and histories are
/// untouched.
pub fn assign_weights(mut dataset: WeightedDataset, scheme: WeightScheme, params: &WeightParams) -> Result<WeightedDataset> {
    if !(params.intervention > 1.0) || !(params.pre_intervention >= 0.0 && params.pre_intervention < 1.0) {
        return Err(CoreError::Parameter(format!(
            "weights need intervention > 1 and 0 <= pre-intervention < 1, got {params:?}"
        )));
    }
    for s in &mut dataset.samples {
        s.weight = weight_for(scheme, params, s.label, s.source);
    }
    dataset.scheme = scheme;
    if !dataset.samples.iter().any(|s| s.weight > 0.0) {
        return Err(CoreError::Parameter(format!("no sample has positive weight under {}", scheme.as_str())));
    }
    Ok(dataset)
}

impl WeightedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Episode indices of the `history_len` entries ending at `t`, oldest
    /// first; the start is padded by repeating step 0.
    pub fn history_indices(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        let l = self.history_len;
        (0..l).map(move |i| (t + i + 1).saturating_sub(l))
    }

    /// The history of sample `i` as (observation, previous action) pairs.
    /// Padding entries repeat the first observation with no previous action.
    pub fn history(&self, i: usize) -> Vec<HistoryEntry> {
        let s = &self.samples[i];
        let ep = &self.episodes[s.episode];
        let l = self.history_len;
        (0..l)
            .map(|k| {
                let pos = s.t as isize - (l - 1 - k) as isize;
                if pos < 0 {
                    HistoryEntry { obs: ep.observations[0].clone(), prev_action: NO_ACTION }
                } else {
                    let j = pos as usize;
                    HistoryEntry { obs: ep.observations[j].clone(), prev_action: ep.prev_actions[j] }
                }
            })
            .collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }

    /// Writes one JSON sample per line with its materialized history.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, s) in self.samples.iter().enumerate() {
            let rec = SampleRecord {
                history: self.history(i),
                target: s.target,
                weight: s.weight,
                label: s.label,
                source: s.source,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the exported format back; each sample gets its own episode.
    pub fn import(path: impl AsRef<Path>, scheme: WeightScheme) -> Result<Self> {
        let mut episodes = Vec::new();
        let mut samples = Vec::new();
        let mut history_len = None;
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line)?;
            let l = rec.history.len();
            if l == 0 || history_len.is_some_and(|h| h != l) {
                return Err(CoreError::Format(format!("inconsistent history length {l}")));
            }
            history_len = Some(l);
            let episode = episodes.len();
            let (observations, prev_actions) = rec.history.into_iter().map(|h| (h.obs, h.prev_action)).unzip();
            episodes.push(Episode { observations, prev_actions });
            samples.push(WeightedSample {
                episode,
                t: l - 1,
                target: rec.target,
                weight: rec.weight,
                label: rec.label,
                source: rec.source,
            });
        }
        let history_len = history_len.ok_or_else(|| CoreError::Format("empty dataset file".into()))?;
        Ok(Self { episodes, samples, scheme, history_len })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Actor, Span, Step, GRIP_OPEN};

    fn obs(x: i32) -> Observation {
        Observation {
            ee_position: [x, 0, 0],
            ee_angles: [0; 3],
            gripper_state: GRIP_OPEN,
            objects: vec![],
            stage_hint: None,
        }
    }

    fn traj(h: usize, stop: Option<usize>, span: Option<Span>) -> Trajectory {
        let mut t = Trajectory::new("t", 0);
        for i in 0..h {
            t.steps.push(Step::new(i, obs(i as i32), Action::new(i as i32, 0, 0, 0, 0, 0, GRIP_OPEN), Actor::Policy));
        }
        t.stop_index = stop;
        t.intervention_span = span;
        t.relabel_segments(3).unwrap();
        t
    }

    #[test]
    fn single_step_history_is_padded() {
        let d = aggregate(&[traj(1, None, None)], &[], 4).unwrap();
        assert_eq!(d.len(), 1);
        let h = d.history(0);
        assert_eq!(h.len(), 4);
        assert!(h.iter().all(|e| e.obs == obs(0) && e.prev_action == NO_ACTION));
    }

    #[test]
    fn history_uses_previous_actions() {
        let d = aggregate(&[traj(5, None, None)], &[], 3).unwrap();
        let h = d.history(4);
        assert_eq!(h.iter().map(|e| e.obs.ee_position[0]).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(h.iter().map(|e| e.prev_action[0]).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn demos_are_nominal_and_counts_add_up() {
        let demos = vec![traj(4, None, None), traj(6, None, None)];
        let rollouts = vec![traj(10, Some(5), Some(Span::new(5, 8)))];
        let d = aggregate(&demos, &rollouts, 10).unwrap();
        assert_eq!(d.len(), 20);
        assert!(d.samples[..10].iter().all(|s| s.label == SegmentLabel::Nominal && s.source == Source::Demo));
        assert_eq!(d.samples[10 + 2].label, SegmentLabel::PreIntervention);
        assert_eq!(d.samples[10 + 5].label, SegmentLabel::Intervention);
        assert_eq!(d.samples[10 + 9].label, SegmentLabel::PostIntervention);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(aggregate(&[], &[], 10), Err(CoreError::Parameter(_))));
        assert!(aggregate(&[traj(0, None, None)], &[], 10).is_err());
    }

    #[test]
    fn hg_dagger_zeroes_pre_intervention() {
        let d = aggregate(&[traj(3, None, None)], &[traj(10, Some(5), Some(Span::new(5, 8)))], 10).unwrap();
        let d = assign_weights(d, WeightScheme::HgDagger, &WeightParams::default()).unwrap();
        for s in &d.samples {
            let expected = if s.source == Source::Demo || s.label == SegmentLabel::Intervention { 1.0 } else { 0.0 };
            assert_eq!(s.weight, expected);
        }
    }

    #[test]
    fn bad_scheme_and_params() {
        assert!("dagger".parse::<WeightScheme>().is_err());
        let d = aggregate(&[traj(3, None, None)], &[], 10).unwrap();
        assert!(assign_weights(d, WeightScheme::Sirius, &WeightParams { intervention: 0.5, pre_intervention: 0.1 }).is_err());
    }

    #[test]
    fn export_import_preserves_histories() {
        let d = aggregate(&[traj(5, None, None)], &[traj(7, Some(4), None)], 3).unwrap();
        let d = assign_weights(d, WeightScheme::Sirius, &WeightParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        d.export(&p).unwrap();
        let back = WeightedDataset::import(&p, WeightScheme::Sirius).unwrap();
        assert_eq!(back.len(), d.len());
        for i in 0..d.len() {
            assert_eq!(back.history(i), d.history(i));
            assert_eq!(back.samples[i].weight, d.samples[i].weight);
            assert_eq!(back.samples[i].target, d.samples[i].target);
        }
    }
}
