use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::agent::AgentClass;
use crate::error::{Error, Result};
use crate::state::Trajectory;
use crate::vec2::Vec2;

/// One line of a trajectory file: `<Fid>,<Vid>,<X>,<Y>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub frame_id: i64,
    pub vehicle_id: u64,
    pub x: f64,
    pub y: f64,
    /// Not part of the four-column file; filled from the class sidecar.
    pub class: Option<AgentClass>,
}

pub fn parse_trajectory_text(text: &str) -> std::result::Result<Vec<TrajectoryRecord>, (usize, String)> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err((lineno, format!("expected 4 fields, found {}", f.len())));
        }
        let frame_id = f[0].parse::<i64>().map_err(|e| (lineno, format!("frame id: {e}")))?;
        let vehicle_id = f[1].parse::<u64>().map_err(|e| (lineno, format!("vehicle id: {e}")))?;
        let x = f[2].parse::<f64>().map_err(|e| (lineno, format!("x: {e}")))?;
        let y = f[3].parse::<f64>().map_err(|e| (lineno, format!("y: {e}")))?;
        if !x.is_finite() || !y.is_finite() {
            return Err((lineno, "non-finite coordinate".to_string()));
        }
        out.push(TrajectoryRecord {
            frame_id,
            vehicle_id,
            x,
            y,
            class: None,
        });
    }
    Ok(out)
}

/// Reads a trajectory file; records keep file order.
pub fn parse_trajectory_file(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory_text(&text).map_err(|(line, msg)| Error::parse(path, line, msg))
}

/// Formats records with 6 decimal places, in the given order.
pub fn format_trajectory_records(records: &[TrajectoryRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 32);
    for r in records {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.frame_id, r.vehicle_id, r.x, r.y);
    }
    out
}

pub fn write_trajectory_file(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    std::fs::write(path, format_trajectory_records(records)).map_err(|e| Error::io(path, e))
}

/// Reads a `vehicle_id,class` sidecar. A header line is optional.
pub fn read_class_sidecar(path: &Path) -> Result<HashMap<u64, AgentClass>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("vehicle_id")) {
            continue;
        }
        let (id, class) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected `vehicle_id,class`"))?;
        let id = id
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::parse(path, idx + 1, format!("vehicle id: {e}")))?;
        let class = class
            .trim()
            .parse::<AgentClass>()
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if out.insert(id, class).is_some() {
            return Err(Error::parse(path, idx + 1, format!("duplicate vehicle id {id}")));
        }
    }
    Ok(out)
}

pub fn format_class_sidecar(classes: &BTreeMap<u64, AgentClass>) -> String {
    let mut out = String::from("vehicle_id,class\n");
    for (id, class) in classes {
        let _ = writeln!(out, "{id},{class}");
    }
    out
}

pub fn write_class_sidecar(path: &Path, classes: &BTreeMap<u64, AgentClass>) -> Result<()> {
    std::fs::write(path, format_class_sidecar(classes)).map_err(|e| Error::io(path, e))
}

/// Groups records into per-agent trajectories ordered by id. Agents without
/// a class in the record or in `classes` become `Other`.
pub fn trajectories_from_records(
    records: &[TrajectoryRecord],
    classes: &HashMap<u64, AgentClass>,
) -> Result<Vec<Trajectory>> {
    let mut by_id: BTreeMap<u64, Vec<(i64, Vec2)>> = BTreeMap::new();
    let mut class_of: HashMap<u64, AgentClass> = HashMap::new();
    for r in records {
        by_id.entry(r.vehicle_id).or_default().push((r.frame_id, Vec2::new(r.x, r.y)));
        if let Some(c) = r.class {
            class_of.insert(r.vehicle_id, c);
        }
    }
    by_id
        .into_iter()
        .map(|(id, mut pts)| {
            pts.sort_by_key(|p| p.0);
            if pts.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::DuplicateId(id));
            }
            let class = classes
                .get(&id)
                .or_else(|| class_of.get(&id))
                .copied()
                .unwrap_or(AgentClass::Other);
            Trajectory::new(id, class, pts)
        })
        .collect()
}

/// Flattens trajectories into records sorted by (frame, id).
pub fn records_from_trajectories(trajs: &[Trajectory]) -> Vec<TrajectoryRecord> {
    let mut out: Vec<TrajectoryRecord> = trajs
        .iter()
        .flat_map(|t| {
            t.points().iter().map(move |&(f, p)| TrajectoryRecord {
                frame_id: f,
                vehicle_id: t.agent_id,
                x: p.x,
                y: p.y,
                class: Some(t.class),
            })
        })
        .collect();
    out.sort_by_key(|r| (r.frame_id, r.vehicle_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_single_line() {
        let r = parse_trajectory_text("3,7,1.000000,2.000000\n").unwrap();
        assert_eq!(
            r,
            vec![TrajectoryRecord {
                frame_id: 3,
                vehicle_id: 7,
                x: 1.0,
                y: 2.0,
                class: None
            }]
        );
        assert!(parse_trajectory_text("").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_number() {
        let (line, _) = parse_trajectory_text("1,1,0.0,0.0\n\n2,x,0.0,0.0\n").unwrap_err();
        assert_eq!(line, 3);
        assert_eq!(parse_trajectory_text("1,1,0.0\n").unwrap_err().0, 1);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classes.csv");
        let map: BTreeMap<u64, AgentClass> = [(1, AgentClass::Bus), (4, AgentClass::Pedestrian)].into();
        write_class_sidecar(&path, &map).unwrap();
        let back = read_class_sidecar(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[&4], AgentClass::Pedestrian);
    }

    #[test]
    fn grouping_sorts_and_rejects_duplicates() {
        let recs = parse_trajectory_text("2,5,1,1\n1,5,0,0\n1,3,9,9\n").unwrap();
        let t = trajectories_from_records(&recs, &HashMap::new()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].agent_id, 3);
        assert_eq!(t[1].points()[0].0, 1);
        assert_eq!(t[1].class, AgentClass::Other);
        let recs = parse_trajectory_text("1,5,1,1\n1,5,0,0\n").unwrap();
        assert!(matches!(
            trajectories_from_records(&recs, &HashMap::new()),
            Err(Error::DuplicateId(5))
        ));
    }
}
