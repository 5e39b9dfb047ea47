//! CSV ingestion, standardization, run manifests and result emission.
//!
//! File layouts are described in `docs/FORMAT.md`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aecm::{FitConfig, FitResult};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::model::ModelVariant;
use crate::selection::{GridSpec, SelectionRecord, SelectionTable};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RESULT_FORMAT_VERSION: u32 = 1;

/// Reads a CSV whose first row holds column ids and first column holds row ids.
pub fn load_csv(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let parse_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::Parse {
            line,
            column: 0,
            message: e.to_string(),
        }
    };

    let header = match records.next() {
        Some(r) => r.map_err(parse_err)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "file is empty".into(),
            })
        }
    };
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            column: header.len(),
            message: "header needs a row-id column and at least one indicator".into(),
        });
    }
    let column_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if let Some(dup) = first_duplicate(&column_ids) {
        return Err(Error::Parse {
            line: 1,
            column: dup + 2,
            message: format!("duplicate column id `{}`", column_ids[dup]),
        });
    }

    let width = header.len();
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for (offset, rec) in records.enumerate() {
        let rec = rec.map_err(parse_err)?;
        let line = offset + 2;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                column: rec.len().min(width),
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        row_ids.push(rec[0].to_owned());
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let column = c + 1;
            if cell.is_empty() {
                return Err(Error::Parse {
                    line,
                    column,
                    message: "blank cell".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column,
                    message: format!("`{cell}` is not finite"),
                });
            }
            values.push(v);
        }
    }
    if row_ids.is_empty() {
        return Err(Error::Parse {
            line: 2,
            column: 1,
            message: "no data rows".into(),
        });
    }
    if let Some(dup) = first_duplicate(&row_ids) {
        return Err(Error::Parse {
            line: dup + 2,
            column: 1,
            message: format!("duplicate row id `{}`", row_ids[dup]),
        });
    }
    let n = row_ids.len();
    DataMatrix::new(values, n, width - 1, row_ids, column_ids)
}

/// Index of the first id that repeats an earlier one.
fn first_duplicate(ids: &[String]) -> Option<usize> {
    let mut seen = std::collections::HashSet::new();
    ids.iter().position(|id| !seen.insert(id.as_str()))
}

/// Writes `data` in the layout read by [`load_csv`]. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn save_csv(data: &DataMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix_csv(&mut buf, "id", data, &(0..data.n_rows()).collect::<Vec<_>>(), &(0..data.n_cols()).collect::<Vec<_>>(), None)?;
    write_atomic(path.as_ref(), &buf)
}

fn write_matrix_csv(
    out: &mut Vec<u8>,
    corner: &str,
    data: &DataMatrix,
    rows: &[usize],
    cols: &[usize],
    row_labels: Option<&[usize]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![corner.to_owned()];
    if row_labels.is_some() {
        header.push("row_cluster".into());
    }
    header.extend(cols.iter().map(|&j| data.column_ids()[j].clone()));
    w.write_record(&header).map_err(csv_write_err)?;
    for &i in rows {
        let mut rec = vec![data.row_ids()[i].clone()];
        if let Some(labels) = row_labels {
            rec.push((labels[i] + 1).to_string());
        }
        rec.extend(cols.iter().map(|&j| data.get(i, j).to_string()));
        w.write_record(&rec).map_err(csv_write_err)?;
    }
    w.flush().map_err(|e| Error::io("<buffer>", e))?;
    Ok(())
}

fn csv_write_err(e: csv::Error) -> Error {
    Error::io("<buffer>", std::io::Error::other(e.to_string()))
}

/// Column centering and scaling constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Always `"n-1"`: the sample standard deviation.
    pub sd_denominator: String,
}

/// Z-scores every column with its mean and sample standard deviation.
pub fn standardize(data: &DataMatrix) -> Result<(DataMatrix, Standardization)> {
    if data.n_rows() < 2 {
        return Err(Error::InvalidInput("standardization needs at least two rows".into()));
    }
    let (means, sds) = data.column_moments();
    if let Some(j) = sds.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ConstantColumn(data.column_ids()[j].clone()));
    }
    let st = Standardization {
        means,
        sds,
        sd_denominator: "n-1".into(),
    };
    Ok((apply_standardization(data, &st)?, st))
}

/// Applies previously recorded constants.
pub fn apply_standardization(data: &DataMatrix, st: &Standardization) -> Result<DataMatrix> {
    if st.means.len() != data.n_cols() || st.sds.len() != data.n_cols() {
        return Err(Error::InvalidInput("standardization constants do not match the data".into()));
    }
    let j = data.n_cols();
    let values = data
        .values()
        .iter()
        .enumerate()
        .map(|(idx, v)| (v - st.means[idx % j]) / st.sds[idx % j])
        .collect();
    Ok(DataMatrix::new(
        values,
        data.n_rows(),
        j,
        data.row_ids().to_vec(),
        data.column_ids().to_vec(),
    )?
    .mark_standardized())
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("not a file path")))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// The single cell requested by a `fit` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub variant: ModelVariant,
    pub l: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_secs: u64,
    pub elapsed_secs: f64,
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub input_path: String,
    pub input_sha256: String,
    pub standardization: Option<Standardization>,
    pub fit_config: FitConfig,
    pub grid: Option<GridSpec>,
    pub cell: Option<CellSpec>,
    pub threads: Option<usize>,
    pub selected: Option<String>,
    pub timing: Option<Timing>,
}

/// Saved state consumed by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    pub manifest: RunManifest,
    pub fit: FitResult,
    pub table: SelectionTable,
}

pub fn load_fit_state(path: impl AsRef<Path>) -> Result<FitState> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Row and column orderings for drawing the partitioned heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedMatrix {
    /// Canonical (1-based) component whose column clusters order the columns.
    pub reference_component: usize,
    /// Row ids sorted by hard cluster, then by input order.
    pub row_order: Vec<String>,
    /// Start of every row block plus the total row count.
    pub row_boundaries: Vec<usize>,
    pub column_order: Vec<String>,
    pub column_boundaries: Vec<usize>,
    pub per_component: Vec<ComponentOrdering>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentOrdering {
    pub component: usize,
    pub column_order: Vec<String>,
    pub column_boundaries: Vec<usize>,
}

fn block_order(labels: &[usize]) -> BlockOrder {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| (labels[i], i));
    let mut bounds = vec![0];
    for p in 1..order.len() {
        if labels[order[p]] != labels[order[p - 1]] {
            bounds.push(p);
        }
    }
    bounds.push(order.len());
    (order, bounds)
}

/// An index order with the start of every block plus the total length.
pub type BlockOrder = (Vec<usize>, Vec<usize>);

/// Index orderings: `(rows, row bounds, per-component (cols, col bounds))`.
pub fn ordered_indices(fit: &FitResult) -> (Vec<usize>, Vec<usize>, Vec<BlockOrder>) {
    let (rows, row_bounds) = block_order(&fit.row_assignment);
    let cols = fit.column_assignments.iter().map(|a| block_order(a)).collect();
    (rows, row_bounds, cols)
}

pub fn ordered_matrix(data: &DataMatrix, fit: &FitResult) -> OrderedMatrix {
    let (rows, row_boundaries, cols) = ordered_indices(fit);
    let ids = |order: &[usize], src: &[String]| order.iter().map(|&i| src[i].clone()).collect::<Vec<_>>();
    let per_component: Vec<ComponentOrdering> = cols
        .iter()
        .enumerate()
        .map(|(k, (order, bounds))| ComponentOrdering {
            component: k + 1,
            column_order: ids(order, data.column_ids()),
            column_boundaries: bounds.clone(),
        })
        .collect();
    OrderedMatrix {
        reference_component: 1,
        row_order: ids(&rows, data.row_ids()),
        row_boundaries,
        column_order: per_component[0].column_order.clone(),
        column_boundaries: per_component[0].column_boundaries.clone(),
        per_component,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSummary {
    pub indicator: String,
    pub mean: f64,
    pub error_variance: f64,
    pub column_cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnClusterSummary {
    pub cluster: usize,
    pub indicators: Vec<String>,
    pub u_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub component: usize,
    pub weight: f64,
    pub size: usize,
    pub indicators: Vec<IndicatorSummary>,
    pub column_clusters: Vec<ColumnClusterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedModel {
    pub variant: ModelVariant,
    pub k: usize,
    pub l: Vec<usize>,
    pub effective_l: Vec<usize>,
    pub loglik: f64,
    pub n_par: usize,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub n_cycles: usize,
    pub warnings: Vec<String>,
}

/// The structured result document (`result.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub format: String,
    pub format_version: u32,
    pub manifest: RunManifest,
    pub n_rows: usize,
    pub n_cols: usize,
    pub selected: SelectedModel,
    pub components: Vec<ComponentSummary>,
    pub criteria: Vec<SelectionRecord>,
    pub criterion: crate::selection::Criterion,
    pub ordered_matrix: OrderedMatrix,
}

pub fn result_document(data: &DataMatrix, fit: &FitResult, table: &SelectionTable, manifest: &RunManifest) -> ResultDocument {
    let params = &fit.params;
    let mut sizes = vec![0; params.k()];
    for &k in &fit.row_assignment {
        sizes[k] += 1;
    }
    let components = params
        .components
        .iter()
        .enumerate()
        .map(|(k, c)| ComponentSummary {
            component: k + 1,
            weight: params.pi[k],
            size: sizes[k],
            indicators: (0..data.n_cols())
                .map(|j| IndicatorSummary {
                    indicator: data.column_ids()[j].clone(),
                    mean: c.mu[j],
                    error_variance: c.d[j],
                    column_cluster: c.membership.label(j) + 1,
                })
                .collect(),
            column_clusters: (0..c.membership.n_clusters())
                .map(|l| ColumnClusterSummary {
                    cluster: l + 1,
                    indicators: (0..data.n_cols())
                        .filter(|&j| c.membership.label(j) == l)
                        .map(|j| data.column_ids()[j].clone())
                        .collect(),
                    u_hat: c.u_hat[l],
                })
                .collect(),
        })
        .collect();
    let mut manifest = manifest.clone();
    manifest.timing = None;
    ResultDocument {
        format: "bimix-result".into(),
        format_version: RESULT_FORMAT_VERSION,
        manifest,
        n_rows: data.n_rows(),
        n_cols: data.n_cols(),
        selected: SelectedModel {
            variant: params.variant,
            k: params.k(),
            l: params.dims.l().to_vec(),
            effective_l: fit.effective_l.clone(),
            loglik: fit.loglik,
            n_par: fit.n_par,
            aic: crate::selection::aic(fit.loglik, fit.n_par),
            bic: crate::selection::bic(fit.loglik, fit.n_par, fit.n_obs),
            converged: fit.converged,
            n_cycles: fit.n_cycles_used,
            warnings: fit.warnings.clone(),
        },
        components,
        criteria: table.records.clone(),
        criterion: table.criterion,
        ordered_matrix: ordered_matrix(data, fit),
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("plain data serializes");
    s.push(b'\n');
    s
}

/// Writes every output of a run into `out_dir` and returns the written paths.
///
/// `data` must be the matrix the model was fitted to.
pub fn emit_results(
    data: &DataMatrix,
    fit: &FitResult,
    table: &SelectionTable,
    manifest: &RunManifest,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if fit.responsibilities.n_rows() != data.n_rows() || fit.params.n_cols() != data.n_cols() {
        return Err(Error::InvalidInput("fit does not match the data".into()));
    }

    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    files.push((out_dir.join("result.json"), to_json(&result_document(data, fit, table, manifest))));

    // Responsibilities and hard labels.
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "row_cluster".to_string()];
    header.extend((1..=fit.params.k()).map(|k| format!("z{k}")));
    w.write_record(&header).map_err(csv_write_err)?;
    for i in 0..data.n_rows() {
        let mut rec = vec![data.row_ids()[i].clone(), (fit.row_assignment[i] + 1).to_string()];
        rec.extend(fit.responsibilities.z.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_write_err)?;
    }
    files.push((out_dir.join("responsibilities.csv"), csv_bytes(w)?));

    // Column clusters, one column per component.
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["indicator".to_string()];
    header.extend((1..=fit.params.k()).map(|k| format!("component{k}")));
    w.write_record(&header).map_err(csv_write_err)?;
    for j in 0..data.n_cols() {
        let mut rec = vec![data.column_ids()[j].clone()];
        rec.extend(fit.column_assignments.iter().map(|a| (a[j] + 1).to_string()));
        w.write_record(&rec).map_err(csv_write_err)?;
    }
    files.push((out_dir.join("column_clusters.csv"), csv_bytes(w)?));

    // Ordered matrices: reference ordering plus one per component.
    let (rows, _, cols) = ordered_indices(fit);
    for (k, (col_order, _)) in cols.iter().enumerate() {
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, "id", data, &rows, col_order, Some(&fit.row_assignment))?;
        let name = if k == 0 {
            "ordered_matrix.csv".to_string()
        } else {
            format!("ordered_matrix_component{}.csv", k + 1)
        };
        files.push((out_dir.join(name), buf));
    }

    let state = FitState {
        manifest: manifest.clone(),
        fit: fit.clone(),
        table: table.clone(),
    };
    files.push((out_dir.join("fit_state.json"), to_json(&state)));
    files.push((out_dir.join("manifest.json"), to_json(manifest)));

    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::io("<buffer>", std::io::Error::other(e.to_string())))
}
