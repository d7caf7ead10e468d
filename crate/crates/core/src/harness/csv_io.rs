//! CSV logs. The first line is a `#` comment carrying `key=value` metadata,
//! followed by a header row and one row per step. Reals are written with
//! 17 significant digits so that reading a file back is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::agent::EpisodeSummary;
use crate::controller::{ErrorVector, GainVector};
use crate::error::{Error, Result};
use crate::harness::episode::{EpisodeLog, StepRecord, Termination};
use crate::plant::{Input4, State14, StateVector};

pub const SCHEMA_VERSION: u32 = 1;

const STATE_COLUMNS: [&str; 14] = [
    "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "phi", "theta", "psi", "phi_dot", "theta_dot", "psi_dot", "thrust",
    "thrust_rate",
];
const ERROR_COLUMNS: [&str; 14] = [
    "e_r_x", "e_r_y", "e_r_z", "e_v_x", "e_v_y", "e_v_z", "e_a_x", "e_a_y", "e_a_z", "e_j_x", "e_j_y", "e_j_z",
    "e_psi", "e_psi_dot",
];

/// Episode CSV header, in file order.
pub fn episode_columns() -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend(STATE_COLUMNS.iter().map(|c| c.to_string()));
    cols.extend(ERROR_COLUMNS.iter().map(|c| c.to_string()));
    cols.extend(["s_x", "s_y", "s_z", "s_psi"].map(String::from));
    cols.extend(["u_thrust", "u_phi", "u_theta", "u_psi"].map(String::from));
    cols.extend(["tau_x", "tau_y", "tau_z"].map(String::from));
    cols.extend(["reward", "action", "lambda", "mu"].map(String::from));
    cols.extend((1..=14).map(|i| format!("k{i}")));
    cols.push("V".to_string());
    cols
}

pub const TRAINING_COLUMNS: [&str; 8] =
    ["episode", "return", "mean_loss", "epsilon", "switches", "steps", "updates", "termination"];

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("`{s}` is not a number")))
}

fn metadata_line(pairs: &[(&str, String)]) -> String {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# {}\n", body.join(" "))
}

/// Parses `# k=v k=v ...`.
pub fn parse_metadata(line: &str) -> Result<Vec<(String, String)>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("missing `#` metadata line".into()))?;
    body.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Parse(format!("bad metadata entry `{kv}`")))
        })
        .collect()
}

fn lookup<'a>(meta: &'a [(String, String)], key: &str) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Parse(format!("metadata lacks `{key}`")))
}

fn check_schema(meta: &[(String, String)], kind: &str) -> Result<()> {
    let version = lookup(meta, "schema")?;
    if version != SCHEMA_VERSION.to_string() {
        return Err(Error::Parse(format!("unsupported schema version {version}")));
    }
    let found = lookup(meta, "kind")?;
    if found != kind {
        return Err(Error::Parse(format!("expected a {kind} log, found {found}")));
    }
    Ok(())
}

pub fn write_episode<W: Write>(log: &EpisodeLog, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    out.write_all(
        metadata_line(&[
            ("schema", SCHEMA_VERSION.to_string()),
            ("kind", "episode".into()),
            ("seed", log.seed.to_string()),
            ("return", real(log.episode_return)),
            ("termination", log.termination.name().into()),
            ("dwell_steps", log.dwell_steps.to_string()),
            ("off_library", log.off_library.to_string()),
            ("rows", log.rows.len().to_string()),
        ])
        .as_bytes(),
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(episode_columns())?;
    for r in &log.rows {
        let mut rec: Vec<String> = Vec::with_capacity(59);
        rec.push(real(r.t));
        rec.extend(r.x.to_vector().iter().map(|v| real(*v)));
        rec.extend(r.z.iter().map(|v| real(*v)));
        rec.extend(r.s.iter().map(|v| real(*v)));
        rec.extend(r.u.to_vector().iter().map(|v| real(*v)));
        rec.extend(r.tau.iter().map(|v| real(*v)));
        rec.push(real(r.reward));
        rec.push(if log.off_library {
            "-1".to_string()
        } else {
            r.action.to_string()
        });
        rec.push(real(r.lambda));
        rec.push(real(r.mu));
        rec.extend(r.gain.as_slice().iter().map(|v| real(*v)));
        rec.push(real(r.v));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_episode_csv(log: &EpisodeLog, path: &Path) -> Result<()> {
    write_episode(log, File::create(path)?)
}

pub fn read_episode<R: Read>(input: R) -> Result<EpisodeLog> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let meta = parse_metadata(first.trim_end())?;
    check_schema(&meta, "episode")?;
    let off_library: bool = lookup(&meta, "off_library")?
        .parse()
        .map_err(|_| Error::Parse("off_library must be true or false".into()))?;
    let declared_rows: usize = lookup(&meta, "rows")?
        .parse()
        .map_err(|_| Error::Parse("rows must be an integer".into()))?;

    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header != episode_columns() {
        return Err(Error::Parse("episode header does not match the schema".into()));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let vals: Vec<&str> = rec.iter().collect();
        let num = |i: usize| parse_real(vals[i]);
        let block = |start: usize, len: usize| (start..start + len).map(num).collect::<Result<Vec<f64>>>();
        let x = block(1, 14)?;
        let z = block(15, 14)?;
        let s = block(29, 4)?;
        let u = block(33, 4)?;
        let tau = block(37, 3)?;
        let action: i64 = vals[41]
            .parse()
            .map_err(|_| Error::Parse(format!("bad action `{}`", vals[41])))?;
        rows.push(StepRecord {
            t: num(0)?,
            x: State14::from_vector(&StateVector::from_column_slice(&x)),
            z: ErrorVector::from_column_slice(&z),
            s: Vector4::from_column_slice(&s),
            u: Input4::from_vector(&Vector4::from_column_slice(&u)),
            tau: Vector3::from_column_slice(&tau),
            reward: num(40)?,
            action: if action < 0 { 0 } else { action as usize },
            lambda: num(42)?,
            mu: num(43)?,
            gain: GainVector::from_slice(&block(44, 14)?),
            v: num(58)?,
        });
    }
    if rows.len() != declared_rows {
        return Err(Error::Parse(format!(
            "metadata declares {declared_rows} rows, found {}",
            rows.len()
        )));
    }
    Ok(EpisodeLog {
        rows,
        seed: lookup(&meta, "seed")?
            .parse()
            .map_err(|_| Error::Parse("seed must be an integer".into()))?,
        episode_return: parse_real(lookup(&meta, "return")?)?,
        termination: Termination::parse(lookup(&meta, "termination")?)
            .ok_or_else(|| Error::Parse("unknown termination cause".into()))?,
        dwell_steps: lookup(&meta, "dwell_steps")?
            .parse()
            .map_err(|_| Error::Parse("dwell_steps must be an integer".into()))?,
        off_library,
    })
}

pub fn read_episode_csv(path: &Path) -> Result<EpisodeLog> {
    read_episode(File::open(path)?)
}

pub fn write_training_csv(log: &[EpisodeSummary], seed: u64, config_hash: &str, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(
        metadata_line(&[
            ("schema", SCHEMA_VERSION.to_string()),
            ("kind", "training".into()),
            ("seed", seed.to_string()),
            ("config_sha256", config_hash.to_string()),
        ])
        .as_bytes(),
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAINING_COLUMNS)?;
    for e in log {
        w.write_record([
            e.episode.to_string(),
            real(e.episode_return),
            real(e.mean_loss),
            real(e.epsilon),
            e.switches.to_string(),
            e.steps.to_string(),
            e.updates.to_string(),
            e.termination.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a training log back as summaries.
pub fn read_training_csv(path: &Path) -> Result<Vec<EpisodeSummary>> {
    let mut input = BufReader::new(File::open(path)?);
    let mut first = String::new();
    input.read_line(&mut first)?;
    check_schema(&parse_metadata(first.trim_end())?, "training")?;
    let mut reader = csv::Reader::from_reader(input);
    if reader.headers()?.iter().ne(TRAINING_COLUMNS) {
        return Err(Error::Parse("training header does not match the schema".into()));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("`{s}` is not an integer")))
    };
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(EpisodeSummary {
                episode: int(&rec[0])?,
                episode_return: parse_real(&rec[1])?,
                mean_loss: parse_real(&rec[2])?,
                epsilon: parse_real(&rec[3])?,
                switches: int(&rec[4])?,
                steps: int(&rec[5])?,
                updates: int(&rec[6])?,
                termination: Termination::parse(&rec[7])
                    .ok_or_else(|| Error::Parse(format!("unknown termination `{}`", &rec[7])))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;
    use crate::harness::episode::{run_episode, run_fixed_gain_episode, GainTable};

    fn short_log() -> EpisodeLog {
        let mut cfg = RunConfig::default();
        cfg.duration = 0.5;
        let lib = cfg.build_library().unwrap();
        run_episode(&cfg.env(), &GainTable::from_library(&lib), 4, 10, |_, s| (s / 10) % 3, |_| {}).unwrap()
    }

    #[test]
    fn column_count_is_fixed() {
        let cols = episode_columns();
        assert_eq!(cols.len(), 1 + 14 + 14 + 4 + 4 + 3 + 4 + 14 + 1);
        let unique: std::collections::HashSet<_> = cols.iter().collect();
        assert_eq!(unique.len(), cols.len());
    }

    #[test]
    fn episode_round_trip_is_bit_exact() {
        let log = short_log();
        let mut buf = Vec::new();
        write_episode(&log, &mut buf).unwrap();
        let back = read_episode(buf.as_slice()).unwrap();
        assert_eq!(back, log);
        let mut again = Vec::new();
        write_episode(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn full_episode_has_1001_rows() {
        let cfg = RunConfig::default();
        let lib = cfg.build_library().unwrap();
        let log = run_fixed_gain_episode(&cfg.env(), &GainTable::from_library(&lib), 0, 0).unwrap();
        let mut buf = Vec::new();
        write_episode(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 1 + 1001);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut buf = Vec::new();
        write_episode(&short_log(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_episode(cut.as_bytes()), Err(Error::Parse(_))));
        let headless: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(read_episode(headless.as_bytes()).is_err());
    }

    #[test]
    fn training_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        let log = vec![
            EpisodeSummary {
                episode: 0,
                episode_return: -1.25,
                mean_loss: f64::NAN,
                epsilon: 1.0,
                switches: 3,
                steps: 1001,
                updates: 0,
                termination: Termination::Completed,
            },
            EpisodeSummary {
                episode: 1,
                episode_return: -0.1 - 0.2,
                mean_loss: 1e-300,
                epsilon: 0.95,
                switches: 0,
                steps: 17,
                updates: 4,
                termination: Termination::SafetyViolation,
            },
        ];
        write_training_csv(&log, 5, "00ff", &path).unwrap();
        let back = read_training_csv(&path).unwrap();
        assert!(back[0].mean_loss.is_nan());
        assert_eq!(back[1], log[1]);
        assert_eq!(back[0].episode_return, log[0].episode_return);
    }
}
