//! Line-delimited JSON trajectory archive.
//!
//! One record per line. Observations are flattened to integer arrays with the
//! object names stored once per record, so a record is fully integral apart
//! from the correction text and provenance strings. Encoding is canonical:
//! `encode(decode(line)) == line`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{Action, Actor, Observation, Provenance, SegmentLabel, Span, Step, Trajectory, VerbalCorrection};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    schema_version: u32,
    task: String,
    seed: u64,
    objects: Vec<String>,
    steps: Vec<StepRecord>,
    final_obs: Option<ObsRecord>,
    events: Events,
    window: usize,
    labels: Vec<SegmentLabel>,
    success: bool,
    incomplete: bool,
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    t: usize,
    actor: Actor,
    obs: Vec<i32>,
    stage: Option<usize>,
    action: Action,
    original: Option<Action>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObsRecord {
    obs: Vec<i32>,
    stage: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Events {
    stop: Option<usize>,
    stop_action: Option<Action>,
    correction: Option<VerbalCorrection>,
    intervention: Option<Span>,
}

fn object_names(traj: &Trajectory) -> Vec<String> {
    traj.steps
        .first()
        .map(|s| &s.obs)
        .or(traj.final_obs.as_ref())
        .map(|o| o.objects.iter().map(|p| p.name.clone()).collect())
        .unwrap_or_default()
}

fn flatten(obs: &Observation, names: &[String]) -> Result<Vec<i32>> {
    if obs.objects.len() != names.len() || obs.objects.iter().zip(names).any(|(o, n)| &o.name != n) {
        return Err(CoreError::Format("object set changes within a trajectory".into()));
    }
    Ok(obs.to_flat())
}

/// Encodes one trajectory as a single JSON line (without the newline).
pub fn encode(traj: &Trajectory) -> Result<String> {
    let names = object_names(traj);
    let steps = traj
        .steps
        .iter()
        .map(|s| {
            Ok(StepRecord {
                t: s.t,
                actor: s.actor,
                obs: flatten(&s.obs, &names)?,
                stage: s.obs.stage_hint,
                action: s.action,
                original: s.original_action,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_obs = traj
        .final_obs
        .as_ref()
        .map(|o| Ok::<_, CoreError>(ObsRecord { obs: flatten(o, &names)?, stage: o.stage_hint }))
        .transpose()?;
    let record = Record {
        schema_version: SCHEMA_VERSION,
        task: traj.task.clone(),
        seed: traj.seed,
        objects: names,
        steps,
        final_obs,
        events: Events {
            stop: traj.stop_index,
            stop_action: traj.stop_action,
            correction: traj.correction.clone(),
            intervention: traj.intervention_span,
        },
        window: traj.window,
        labels: traj.labels.clone(),
        success: traj.success,
        incomplete: traj.incomplete,
        provenance: traj.provenance.clone(),
    };
    Ok(serde_json::to_string(&record)?)
}

pub fn decode(line: &str) -> Result<Trajectory> {
    let r: Record = serde_json::from_str(line)?;
    if r.schema_version != SCHEMA_VERSION {
        return Err(CoreError::Format(format!("unsupported schema version {}", r.schema_version)));
    }
    let steps = r
        .steps
        .into_iter()
        .map(|s| {
            Ok(Step {
                t: s.t,
                obs: Observation::from_flat(&s.obs, &r.objects, s.stage)?,
                action: s.action,
                actor: s.actor,
                original_action: s.original,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_obs = r
        .final_obs
        .map(|o| Observation::from_flat(&o.obs, &r.objects, o.stage))
        .transpose()?;
    Ok(Trajectory {
        task: r.task,
        seed: r.seed,
        steps,
        final_obs,
        stop_index: r.events.stop,
        stop_action: r.events.stop_action,
        correction: r.events.correction,
        intervention_span: r.events.intervention,
        window: r.window,
        labels: r.labels,
        success: r.success,
        incomplete: r.incomplete,
        provenance: r.provenance,
    })
}

pub fn write_to<W: Write>(mut w: W, trajs: &[Trajectory]) -> Result<()> {
    for t in trajs {
        w.write_all(encode(t)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_bytes(trajs: &[Trajectory]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_to(&mut buf, trajs)?;
    Ok(buf)
}

pub fn write_archive(path: impl AsRef<Path>, trajs: &[Trajectory]) -> Result<()> {
    let f = File::create(path)?;
    write_to(BufWriter::new(f), trajs)
}

pub fn read_from<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decode(&line).map_err(|e| CoreError::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    read_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FeedbackStyle, ObjectPose};
    use proptest::prelude::*;

    fn obs(seed: i32) -> Observation {
        Observation {
            ee_position: [seed, -7, 97],
            ee_angles: [0, -5, -8],
            gripper_state: -100,
            objects: vec![
                ObjectPose { name: "handle".into(), position: [-16, 13, 83], angles: [0, 0, -95] },
                ObjectPose { name: "peg".into(), position: [23, 10, 85], angles: [0, 0, 0] },
            ],
            stage_hint: Some(0),
        }
    }

    fn sample(h: usize, stop: Option<usize>) -> Trajectory {
        let mut t = Trajectory::new("square", 7);
        t.steps = (0..h)
            .map(|i| Step::new(i, obs(i as i32), Action::new(20, 0, 0, 0, 0, 0, -100), Actor::Policy))
            .collect();
        t.final_obs = Some(obs(h as i32));
        if let Some(s) = stop {
            t.stop_index = Some(s);
            t.stop_action = Some(Action::new(0, 5, 0, 0, 0, 0, 100));
            t.correction = Some(VerbalCorrection::new("Stop. You should move to your left to reach the can.", s, FeedbackStyle::Long).unwrap());
        }
        t.relabel_segments(15).unwrap();
        t
    }

    #[test]
    fn decodes_what_it_encodes() {
        let t = sample(20, Some(18));
        let line = encode(&t).unwrap();
        assert_eq!(decode(&line).unwrap(), t);
    }

    #[test]
    fn rejects_unknown_schema() {
        let line = encode(&sample(2, None)).unwrap().replace("\"schema_version\":1", "\"schema_version\":9");
        assert!(matches!(decode(&line), Err(CoreError::Format(_))));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(h in 1usize..30, stop in proptest::option::of(0usize..30), seed in any::<u64>()) {
            let stop = stop.map(|s| s.min(h));
            let mut t = sample(h, stop);
            t.seed = seed;
            let bytes = to_bytes(std::slice::from_ref(&t)).unwrap();
            let back = read_from(bytes.as_slice()).unwrap();
            prop_assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }
}
