//! CSV and JSON emission, and the observation file reader.
//!
//! Floats are written with Rust's shortest round-trip formatting so that
//! reruns produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Locations;

/// Write a header and rows of pre-formatted fields. LF line endings.
pub fn write_csv<W, I, R>(w: W, header: &[&str], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wr.write_record(header)?;
    for r in rows {
        wr.write_record(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_csv_file<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    write_csv(BufWriter::new(File::create(path)?), header, rows)
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Formats a float for output.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Deserialize)]
struct ObsRow {
    track_id: String,
    lon_deg: Option<f64>,
    lat_deg: Option<f64>,
    arc_km: Option<f64>,
    value: Option<f64>,
    sigma_o: Option<f64>,
}

/// Observations of one track, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsTrack {
    pub track_id: String,
    pub locations: Locations,
    pub values: Option<Vec<f64>>,
    pub sigma_o: Option<Vec<f64>>,
}

fn collect_optional(track: &str, name: &str, v: Vec<Option<f64>>) -> Result<Option<Vec<f64>>> {
    let present = v.iter().filter(|x| x.is_some()).count();
    if present == 0 {
        return Ok(None);
    }
    if present != v.len() {
        return Err(Error::Input(format!(
            "track `{track}`: column `{name}` is filled for some rows only"
        )));
    }
    Ok(Some(v.into_iter().flatten().collect()))
}

/// Read an observation CSV with columns `track_id` and either `arc_km` or
/// `lon_deg, lat_deg`, plus optional `value` and `sigma_o`. Rows of one track
/// must be contiguous and ordered along the track.
pub fn read_obs_csv<R: Read>(r: R) -> Result<Vec<ObsTrack>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rd.headers()?.clone();
    let has = |c: &str| headers.iter().any(|h| h == c);
    if !has("track_id") {
        return Err(Error::Input("missing column `track_id`".into()));
    }
    let geographic = has("lon_deg") && has("lat_deg");
    if !geographic && !has("arc_km") {
        return Err(Error::Input(
            "need either `arc_km` or both `lon_deg` and `lat_deg`".into(),
        ));
    }

    struct Acc {
        id: String,
        arc: Vec<f64>,
        ll: Vec<(f64, f64)>,
        values: Vec<Option<f64>>,
        sigma: Vec<Option<f64>>,
    }
    let mut groups: Vec<Acc> = Vec::new();
    for (line, row) in rd.deserialize::<ObsRow>().enumerate() {
        let row = row?;
        let n = line + 2;
        if groups.last().map(|g| g.id != row.track_id).unwrap_or(true) {
            if groups.iter().any(|g| g.id == row.track_id) {
                return Err(Error::Input(format!(
                    "line {n}: rows of track `{}` are not contiguous",
                    row.track_id
                )));
            }
            groups.push(Acc {
                id: row.track_id.clone(),
                arc: Vec::new(),
                ll: Vec::new(),
                values: Vec::new(),
                sigma: Vec::new(),
            });
        }
        let g = groups.last_mut().expect("pushed above");
        if geographic {
            match (row.lon_deg, row.lat_deg) {
                (Some(lon), Some(lat)) => g.ll.push((lon, lat)),
                _ => return Err(Error::Input(format!("line {n}: missing lon_deg or lat_deg"))),
            }
        } else {
            match row.arc_km {
                Some(a) => g.arc.push(a),
                None => return Err(Error::Input(format!("line {n}: missing arc_km"))),
            }
        }
        g.values.push(row.value);
        g.sigma.push(row.sigma_o);
    }
    groups
        .into_iter()
        .map(|g| {
            let values = collect_optional(&g.id, "value", g.values)?;
            let sigma_o = collect_optional(&g.id, "sigma_o", g.sigma)?;
            Ok(ObsTrack {
                locations: if geographic {
                    Locations::LonLat(g.ll)
                } else {
                    Locations::ArcKm(g.arc)
                },
                track_id: g.id,
                values,
                sigma_o,
            })
        })
        .collect()
}

pub fn read_obs_file(path: &Path) -> Result<Vec<ObsTrack>> {
    let f = File::open(path).map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    read_obs_csv(f)
}
