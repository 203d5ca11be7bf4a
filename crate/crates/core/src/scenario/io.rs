//! On-disk library formats.
//!
//! * `jsonl`: a versioned header record followed by one scenario record per
//!   line. This is the canonical format.
//! * `flat_csv`: one row per `(scenario_id, t, vehicle_id, x, y, v, theta)`
//!   tuple. Vehicle 0 is the AV and only appears at `t = 0`. The CSV carries
//!   no header record, so road geometry and `dt` come from [`LoadOptions`].

use super::{validate_scenario, LibraryMetadata, Scenario, ScenarioLibrary, VehicleState};
use crate::error::{Error, Result};
use crate::road::{DynamicsLimits, RoadGeometry};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LibraryFormat {
    Jsonl,
    FlatCsv,
}

impl std::str::FromStr for LibraryFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "flat_csv" | "csv" => Ok(Self::FlatCsv),
            other => Err(Error::Config(format!("unknown library format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub limits: DynamicsLimits,
    /// Run `validate_scenario` on every record and fail on the first violation.
    pub validate_dynamics: bool,
    /// Used for `flat_csv`, which has no header record.
    pub road: RoadGeometry,
    pub dt: f64,
    pub n_max: usize,
    pub h_max: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            limits: DynamicsLimits::default(),
            validate_dynamics: true,
            road: RoadGeometry::default(),
            dt: 0.04,
            n_max: 4,
            h_max: 100,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    dt: f64,
    road: RoadGeometry,
    n_max: usize,
    h_max: usize,
    provenance: String,
    seed: Option<u64>,
}

pub fn load_library(path: &Path, format: LibraryFormat, opts: &LoadOptions) -> Result<ScenarioLibrary> {
    let lib = match format {
        LibraryFormat::Jsonl => read_jsonl(path)?,
        LibraryFormat::FlatCsv => read_csv(path, opts)?,
    };
    lib.check()?;
    if opts.validate_dynamics {
        for s in &lib.scenarios {
            if let Some(v) = validate_scenario(s, &lib.road, &opts.limits).into_iter().next() {
                return Err(Error::invariant(&s.id, v.quantity.to_string(), v.to_string()));
            }
        }
    }
    Ok(lib)
}

fn read_jsonl(path: &Path) -> Result<ScenarioLibrary> {
    let reader = BufReader::new(File::open(path)?);
    let mut header: Option<Header> = None;
    let mut scenarios = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let record = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: Header = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    record,
                    detail: format!("header: {e}"),
                })?;
                if h.format_version != FORMAT_VERSION {
                    return Err(Error::Version {
                        found: h.format_version,
                        expected: FORMAT_VERSION,
                    });
                }
                header = Some(h);
            }
            Some(_) => {
                let s: Scenario = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    record,
                    detail: e.to_string(),
                })?;
                scenarios.push(s);
            }
        }
    }
    let h = header.ok_or_else(|| Error::Parse {
        record: 1,
        detail: "missing header record".into(),
    })?;
    h.road.check().map_err(|e| Error::Parse { record: 1, detail: e })?;
    Ok(ScenarioLibrary {
        scenarios,
        road: h.road,
        dt: h.dt,
        n_max: h.n_max,
        h_max: h.h_max,
        metadata: LibraryMetadata {
            provenance: h.provenance,
            seed: h.seed,
        },
    })
}

pub fn write_library(lib: &ScenarioLibrary, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format_version: FORMAT_VERSION,
        dt: lib.dt,
        road: lib.road,
        n_max: lib.n_max,
        h_max: lib.h_max,
        provenance: lib.metadata.provenance.clone(),
        seed: lib.metadata.seed,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in &lib.scenarios {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct FlatRow {
    scenario_id: String,
    t: usize,
    vehicle_id: usize,
    x: f64,
    y: f64,
    v: f64,
    theta: f64,
}

pub fn write_library_csv(lib: &ScenarioLibrary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in &lib.scenarios {
        let row = |t: usize, vehicle_id: usize, st: &VehicleState| FlatRow {
            scenario_id: s.id.clone(),
            t,
            vehicle_id,
            x: st.x,
            y: st.y,
            v: st.v,
            theta: st.theta,
        };
        w.serialize(row(0, 0, &s.av_init))?;
        for t in 0..=s.horizon() {
            for (j, st) in s.bv_frame(t).iter().enumerate() {
                w.serialize(row(t, j + 1, st))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_csv(path: &Path, opts: &LoadOptions) -> Result<ScenarioLibrary> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut scenarios: Vec<Scenario> = Vec::new();
    for (i, row) in reader.deserialize::<FlatRow>().enumerate() {
        // +2: one for the column header line, one for 1-based numbering.
        let record = i + 2;
        let row = row.map_err(|e| Error::Parse {
            record,
            detail: e.to_string(),
        })?;
        let state = VehicleState::new(row.x, row.y, row.v, row.theta);
        let fresh = scenarios.last().map_or(true, |s| s.id != row.scenario_id);
        if fresh {
            if row.t != 0 || row.vehicle_id != 0 {
                return Err(Error::Parse {
                    record,
                    detail: format!("scenario `{}` must start with the AV row (t=0, vehicle_id=0)", row.scenario_id),
                });
            }
            scenarios.push(Scenario {
                id: row.scenario_id,
                dt: opts.dt,
                av_init: state,
                bv_init: vec![],
                bv_frames: vec![],
                maneuvers: vec![],
            });
            continue;
        }
        let s = scenarios.last_mut().expect("scenario started above");
        let out_of_order = || Error::Parse {
            record,
            detail: format!("row (t={}, vehicle_id={}) out of order in `{}`", row.t, row.vehicle_id, s.id),
        };
        if row.vehicle_id == 0 {
            return Err(out_of_order());
        }
        if row.t == 0 {
            if row.vehicle_id != s.bv_init.len() + 1 || !s.bv_frames.is_empty() {
                return Err(out_of_order());
            }
            s.bv_init.push(state);
        } else {
            if row.t == s.bv_frames.len() + 1 && row.vehicle_id == 1 {
                s.bv_frames.push(Vec::with_capacity(s.bv_init.len()));
            }
            let frame_ok = row.t == s.bv_frames.len();
            match s.bv_frames.last_mut() {
                Some(frame) if frame_ok && row.vehicle_id == frame.len() + 1 => frame.push(state),
                _ => return Err(out_of_order()),
            }
        }
    }
    Ok(ScenarioLibrary {
        scenarios,
        road: opts.road,
        dt: opts.dt,
        n_max: opts.n_max,
        h_max: opts.h_max,
        metadata: LibraryMetadata {
            provenance: format!("flat_csv:{}", path.display()),
            seed: None,
        },
    })
}
