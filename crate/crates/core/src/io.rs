//! File formats.
//!
//! * Datasets: comma-separated UTF-8 with a header row. Responses are
//!   columns `y1..yp` holding integer levels, covariates are `x1..xH`
//!   holding decimal reals. Column order is free.
//! * Model specifications: JSON, either a log-linear document
//!   (`"form": "loglinear"`, levels and per-slot maximal sets) or a dynamic
//!   Ising document (`"form": "ising"`, per-slot edge lists).
//! * Edge lists: CSV with header `slot,u,v,weight`, `u < v`, weight optional.
//!
//! Vertex references in files are 1-based to match the `y1..yp` columns;
//! JSON documents also accept vertex names.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ising::{BinaryDataset, DynamicIsingStructure, IsingParameters};
use crate::loglinear::{Cell, GeneratingClass, LevelSpace, ModelSpec, ObservationSet, ParameterSet};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::parse(path.display(), format!("{other:?}")),
    }
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Positions of the `y` and `x` columns in a header.
struct Columns {
    responses: Vec<usize>,
    covariates: Vec<usize>,
}

fn parse_header(path: &Path, header: &csv::StringRecord) -> Result<Columns> {
    let mut y: BTreeMap<usize, usize> = BTreeMap::new();
    let mut x: BTreeMap<usize, usize> = BTreeMap::new();
    for (position, name) in header.iter().enumerate() {
        let name = name.trim();
        let (map, rest) = match (name.strip_prefix('y'), name.strip_prefix('x')) {
            (Some(rest), _) => (&mut y, rest),
            (_, Some(rest)) => (&mut x, rest),
            _ => return Err(Error::parse(path.display(), format!("header: unexpected column '{name}'"))),
        };
        let k: usize = rest
            .parse()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| Error::parse(path.display(), format!("header: unexpected column '{name}'")))?;
        if map.insert(k, position).is_some() {
            return Err(Error::parse(path.display(), format!("header: duplicate column '{name}'")));
        }
    }
    let contiguous = |map: &BTreeMap<usize, usize>, prefix: char| -> Result<Vec<usize>> {
        for (expected, &k) in (1..).zip(map.keys()) {
            if k != expected {
                return Err(Error::parse(path.display(), format!("header: missing column '{prefix}{expected}'")));
            }
        }
        Ok(map.values().copied().collect())
    };
    let responses = contiguous(&y, 'y')?;
    if responses.is_empty() {
        return Err(Error::parse(path.display(), "header: missing column 'y1'"));
    }
    Ok(Columns {
        responses,
        covariates: contiguous(&x, 'x')?,
    })
}

/// Iterates data rows as `(row number, responses, covariates)`, rows 1-based
/// after the header.
fn read_rows(
    path: &Path,
    mut each: impl FnMut(usize, Vec<usize>, Vec<f64>) -> Result<()>,
    check_level: impl Fn(usize, usize) -> bool,
) -> Result<(usize, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(open(path)?));
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let columns = parse_header(path, &header)?;
    let p = columns.responses.len();
    let h = columns.covariates.len();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(Error::parse(
                path.display(),
                format!("row {row}: {} fields, header has {}", record.len(), header.len()),
            ));
        }
        let mut y = Vec::with_capacity(p);
        for (v, &c) in columns.responses.iter().enumerate() {
            let field = &record[c];
            let level: usize = field.parse().map_err(|_| {
                Error::parse(path.display(), format!("row {row}, column y{}: '{field}' is not an integer level", v + 1))
            })?;
            if !check_level(v, level) {
                return Err(Error::parse(
                    path.display(),
                    format!("row {row}, column y{}: level {level} out of range", v + 1),
                ));
            }
            y.push(level);
        }
        let mut x = Vec::with_capacity(h);
        for (k, &c) in columns.covariates.iter().enumerate() {
            let field = &record[c];
            let value: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    Error::parse(path.display(), format!("row {row}, column x{}: '{field}' is not a finite number", k + 1))
                })?;
            x.push(value);
        }
        each(row, y, x)?;
    }
    Ok((p, h))
}

/// Reads a multi-level dataset; the `y` columns must match `space`.
pub fn read_observations(path: &Path, space: &LevelSpace) -> Result<ObservationSet> {
    let mut rows = Vec::new();
    let levels = space.levels().to_vec();
    let (p, h) = read_rows(
        path,
        |_, y, x| {
            rows.push((Cell::new(y), x));
            Ok(())
        },
        |v, level| v < levels.len() && level < levels[v],
    )?;
    if p != space.vertex_count() {
        return Err(Error::parse(
            path.display(),
            format!("header: {p} response columns, the model has {} vertices", space.vertex_count()),
        ));
    }
    ObservationSet::from_rows(space.clone(), h, rows)
}

/// Reads a binary dataset; the vertex and covariate counts come from the header.
pub fn read_binary(path: &Path) -> Result<BinaryDataset> {
    let mut rows: Vec<(Vec<u8>, Vec<f64>)> = Vec::new();
    let (p, h) = read_rows(
        path,
        |_, y, x| {
            rows.push((y.into_iter().map(|v| v as u8).collect(), x));
            Ok(())
        },
        |_, level| level < 2,
    )?;
    let mut data = BinaryDataset::new(p, h);
    for (y, x) in rows {
        data.push(&y, &x)?;
    }
    Ok(data)
}

fn write_rows<'a>(
    path: &Path,
    p: usize,
    h: usize,
    rows: impl Iterator<Item = (Vec<usize>, &'a [f64])>,
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(create(path)?);
    let header: Vec<String> = (1..=p).map(|v| format!("y{v}")).chain((1..=h).map(|k| format!("x{k}"))).collect();
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (y, x) in rows {
        let record: Vec<String> = y.iter().map(|v| v.to_string()).chain(x.iter().map(|v| v.to_string())).collect();
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_observations(path: &Path, data: &ObservationSet) -> Result<()> {
    write_rows(
        path,
        data.level_space().vertex_count(),
        data.covariate_count(),
        data.rows().iter().map(|r| (r.cell.values().to_vec(), r.covariates.as_slice())),
    )
}

pub fn write_binary(path: &Path, data: &BinaryDataset) -> Result<()> {
    write_rows(
        path,
        data.vertex_count(),
        data.covariate_count(),
        (0..data.len()).map(|m| (data.responses(m).iter().map(|&b| b as usize).collect(), data.covariates(m))),
    )
}

/// A vertex given by 1-based index or by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VertexRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoglinearDocument {
    levels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    /// Per slot, the maximal sets of the generating class.
    slots: Vec<Vec<Vec<VertexRef>>>,
    /// Per slot, parameters in canonical interaction order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parameters: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IsingDocument {
    vertices: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
    /// Per slot, the edge list.
    slots: Vec<Vec<[VertexRef; 2]>>,
    /// `main[v][h]`, vertices in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    main: Option<Vec<Vec<f64>>>,
    /// Per slot, weights parallel to the edge list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
enum ModelDocument {
    Loglinear(LoglinearDocument),
    Ising(IsingDocument),
}

/// A model read from a specification file, with parameters when given.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Loglinear {
        spec: ModelSpec,
        parameters: Option<ParameterSet>,
    },
    Ising {
        structure: DynamicIsingStructure,
        parameters: Option<IsingParameters>,
    },
}

/// Default vertex names: `a`, `b`, ... for the first 26 vertices.
fn default_name(v: usize) -> Option<String> {
    (v < 26).then(|| char::from(b'a' + v as u8).to_string())
}

fn resolve(reference: &VertexRef, names: Option<&[String]>, p: usize, at: &str) -> std::result::Result<usize, String> {
    let v = match reference {
        VertexRef::Index(k) if (1..=p).contains(k) => Some(k - 1),
        VertexRef::Index(k) => return Err(format!("{at}: vertex index {k} outside 1..={p}")),
        VertexRef::Name(name) => match names {
            Some(names) => names.iter().position(|n| n == name),
            None => (0..p).find(|&v| default_name(v).as_deref() == Some(name.as_str())),
        },
    };
    v.ok_or_else(|| format!("{at}: unknown vertex {reference:?}"))
}

fn check_names(names: Option<&[String]>, p: usize) -> std::result::Result<(), String> {
    if let Some(names) = names {
        if names.len() != p {
            return Err(format!("names: {} names for {p} vertices", names.len()));
        }
        let mut sorted = names.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != p {
            return Err("names: duplicate vertex name".into());
        }
    }
    Ok(())
}

fn loglinear_from_document(doc: LoglinearDocument) -> std::result::Result<ModelFile, String> {
    let p = doc.levels.len();
    let names = doc.names.as_deref();
    check_names(names, p)?;
    let space = LevelSpace::new(doc.levels.clone()).map_err(|e| format!("levels: {e}"))?;
    let mut classes = Vec::with_capacity(doc.slots.len());
    for (h, slot) in doc.slots.iter().enumerate() {
        let mut sets = Vec::with_capacity(slot.len());
        for (s, set) in slot.iter().enumerate() {
            let members = set
                .iter()
                .enumerate()
                .map(|(k, r)| resolve(r, names, p, &format!("slots[{h}][{s}][{k}]")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            sets.push(members);
        }
        classes.push(GeneratingClass::from_maximal(sets).map_err(|e| format!("slots[{h}]: {e}"))?);
    }
    let spec = ModelSpec::new(space, classes).map_err(|e| format!("slots: {e}"))?;
    let parameters = doc
        .parameters
        .map(|blocks| ParameterSet::new(&spec, blocks).map_err(|e| format!("parameters: {e}")))
        .transpose()?;
    Ok(ModelFile::Loglinear { spec, parameters })
}

fn ising_from_document(doc: IsingDocument) -> std::result::Result<ModelFile, String> {
    let p = doc.vertices;
    let names = doc.names.as_deref();
    check_names(names, p)?;
    let mut slots = Vec::with_capacity(doc.slots.len());
    for (h, slot) in doc.slots.iter().enumerate() {
        let mut edges = Vec::with_capacity(slot.len());
        for (e, [a, b]) in slot.iter().enumerate() {
            let u = resolve(a, names, p, &format!("slots[{h}][{e}][0]"))?;
            let v = resolve(b, names, p, &format!("slots[{h}][{e}][1]"))?;
            if u == v {
                return Err(format!("slots[{h}][{e}]: self-loop on vertex {}", u + 1));
            }
            edges.push((u, v));
        }
        slots.push(edges);
    }
    let structure = DynamicIsingStructure::new(p, slots.clone()).map_err(|e| format!("slots: {e}"))?;
    let parameters = match (doc.main, doc.weights) {
        (None, None) => None,
        (main, weights) => {
            let main = main.unwrap_or_else(|| vec![vec![0.0; structure.slot_count()]; p]);
            let weights = weights.ok_or("weights: required when main effects are given")?;
            if weights.len() != slots.len() {
                return Err(format!("weights: {} slots, edge lists have {}", weights.len(), slots.len()));
            }
            let mut interactions = Vec::with_capacity(slots.len());
            for (h, (edges, w)) in slots.iter().zip(&weights).enumerate() {
                if edges.len() != w.len() {
                    return Err(format!("weights[{h}]: {} weights for {} edges", w.len(), edges.len()));
                }
                let mut map = BTreeMap::new();
                for (&(u, v), &value) in edges.iter().zip(w) {
                    if map.insert((u.min(v), u.max(v)), value).is_some() {
                        return Err(format!("slots[{h}]: duplicate edge ({}, {})", u + 1, v + 1));
                    }
                }
                interactions.push(map);
            }
            Some(IsingParameters::new(&structure, main, interactions).map_err(|e| format!("main/weights: {e}"))?)
        }
    };
    Ok(ModelFile::Ising { structure, parameters })
}

/// Parses a model specification from JSON text; `origin` labels errors.
pub fn parse_model_spec(text: &str, origin: &str) -> Result<ModelFile> {
    let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    match doc {
        ModelDocument::Loglinear(d) => loglinear_from_document(d),
        ModelDocument::Ising(d) => ising_from_document(d),
    }
    .map_err(|message| Error::parse(origin, message))
}

pub fn read_model_spec(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model_spec(&text, &path.display().to_string())
}

fn one_based(set: &[usize]) -> Vec<VertexRef> {
    set.iter().map(|&v| VertexRef::Index(v + 1)).collect()
}

/// Serializes a model in canonical form: 1-based indices, maximal sets only.
pub fn model_spec_to_json(model: &ModelFile) -> Result<String> {
    let doc = match model {
        ModelFile::Loglinear { spec, parameters } => ModelDocument::Loglinear(LoglinearDocument {
            levels: spec.level_space().levels().to_vec(),
            names: None,
            slots: spec
                .classes()
                .iter()
                .map(|class| class.maximal_sets().iter().map(|s| one_based(s)).collect())
                .collect(),
            parameters: parameters.as_ref().map(|p| p.blocks().to_vec()),
        }),
        ModelFile::Ising { structure, parameters } => {
            let slots: Vec<Vec<[VertexRef; 2]>> = (0..structure.slot_count())
                .map(|h| {
                    structure
                        .edges(h)
                        .iter()
                        .map(|&(u, v)| [VertexRef::Index(u + 1), VertexRef::Index(v + 1)])
                        .collect()
                })
                .collect();
            let (main, weights) = match parameters {
                Some(params) => (
                    Some(
                        (0..structure.vertex_count())
                            .map(|v| (0..structure.slot_count()).map(|h| params.main_effect(v, h)).collect())
                            .collect(),
                    ),
                    Some(
                        (0..structure.slot_count())
                            .map(|h| params.interactions(h).values().copied().collect())
                            .collect(),
                    ),
                ),
                None => (None, None),
            };
            ModelDocument::Ising(IsingDocument {
                vertices: structure.vertex_count(),
                names: None,
                slots,
                main,
                weights,
            })
        }
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Numerical(format!("cannot serialize model: {e}")))
}

pub fn write_model_spec(path: &Path, model: &ModelFile) -> Result<()> {
    let mut text = model_spec_to_json(model)?;
    text.push('\n');
    write_text(path, &text)
}

/// One row of an edge-list file; vertices 0-based in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub slot: usize,
    pub u: usize,
    pub v: usize,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeList {
    pub records: Vec<EdgeRecord>,
}

impl EdgeList {
    /// Rows ordered by slot then edge, weights from `parameters` when given.
    pub fn from_structure(structure: &DynamicIsingStructure, parameters: Option<&IsingParameters>) -> Self {
        let records = (0..structure.slot_count())
            .flat_map(|h| {
                structure.edges(h).iter().map(move |&(u, v)| EdgeRecord {
                    slot: h,
                    u,
                    v,
                    weight: parameters.and_then(|p| p.interaction(h, u, v)),
                })
            })
            .collect();
        Self { records }
    }

    pub fn from_slot_sets(slots: &[std::collections::BTreeSet<(usize, usize)>]) -> Self {
        let records = slots
            .iter()
            .enumerate()
            .flat_map(|(h, set)| set.iter().map(move |&(u, v)| EdgeRecord { slot: h, u, v, weight: None }))
            .collect();
        Self { records }
    }

    /// Edge sets per slot; fails on pairs outside the vertex or slot range.
    pub fn to_structure(&self, vertex_count: usize, covariate_count: usize) -> Result<DynamicIsingStructure> {
        let mut slots = vec![Vec::new(); covariate_count + 1];
        for (k, r) in self.records.iter().enumerate() {
            if r.slot > covariate_count {
                return Err(Error::Validation(format!("edge row {}: slot {} outside 0..={covariate_count}", k + 1, r.slot)));
            }
            slots[r.slot].push((r.u, r.v));
        }
        DynamicIsingStructure::new(vertex_count, slots)
    }
}

pub fn read_edge_list(path: &Path) -> Result<EdgeList> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(open(path)?));
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected = ["slot", "u", "v", "weight"];
    if header.len() != 4 || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::parse(path.display(), "header: expected 'slot,u,v,weight'"));
    }
    let mut records = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 4 {
            return Err(Error::parse(path.display(), format!("row {row}: expected 4 fields")));
        }
        let integer = |c: usize| -> Result<usize> {
            record[c].parse().map_err(|_| {
                Error::parse(path.display(), format!("row {row}, column {}: '{}' is not an integer", expected[c], &record[c]))
            })
        };
        let slot = integer(0)?;
        let (u, v) = (integer(1)?, integer(2)?);
        if u == 0 || v == 0 {
            return Err(Error::parse(path.display(), format!("row {row}: vertices are 1-based")));
        }
        if u >= v {
            return Err(Error::parse(path.display(), format!("row {row}: edge ({u},{v}) must satisfy u < v")));
        }
        let weight = match &record[3] {
            "" => None,
            field => Some(field.parse::<f64>().ok().filter(|w| w.is_finite()).ok_or_else(|| {
                Error::parse(path.display(), format!("row {row}, column weight: '{field}' is not a finite number"))
            })?),
        };
        records.push(EdgeRecord {
            slot,
            u: u - 1,
            v: v - 1,
            weight,
        });
    }
    Ok(EdgeList { records })
}

pub fn write_edge_list(path: &Path, edges: &EdgeList) -> Result<()> {
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(["slot", "u", "v", "weight"]).map_err(|e| csv_error(path, e))?;
    for r in &edges.records {
        let weight = r.weight.map(|w| w.to_string()).unwrap_or_default();
        writer
            .write_record([r.slot.to_string(), (r.u + 1).to_string(), (r.v + 1).to_string(), weight])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
