//! Dataset CSV files. Columns are classified by header: `x_*` features,
//! `y` the label, `g_*` 0/1 group memberships and `z` the domain tag
//! (`so` or `ta`). An empty feature cell marks a missing value.

use std::io::Write;
use std::path::Path;

use happymap::{Dataset, Domain, GroupColumns};

use crate::error::{CliError, CliResult};

enum Role {
    Feature,
    Label,
    Group,
    Domain,
}

fn classify(name: &str) -> Option<Role> {
    if name == "y" {
        Some(Role::Label)
    } else if name == "z" {
        Some(Role::Domain)
    } else if name.starts_with("x_") {
        Some(Role::Feature)
    } else if name.starts_with("g_") {
        Some(Role::Group)
    } else {
        None
    }
}

/// Reads `path`. Without a `y` column the labels are zero, which is only
/// accepted when `require_label` is false.
pub fn load_dataset(path: &Path, require_label: bool) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let bad = |line: u64, column: usize, message: String| CliError::Data {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };

    let mut roles = Vec::with_capacity(headers.len());
    let mut group_names = Vec::new();
    let mut label_col = None;
    let mut domain_col = None;
    for (j, name) in headers.iter().enumerate() {
        match classify(name) {
            Some(Role::Label) if label_col.is_some() => {
                return Err(bad(1, j + 1, "duplicate `y` column".into()));
            }
            Some(Role::Domain) if domain_col.is_some() => {
                return Err(bad(1, j + 1, "duplicate `z` column".into()));
            }
            Some(Role::Label) => label_col = Some(j),
            Some(Role::Domain) => domain_col = Some(j),
            Some(Role::Group) => group_names.push(name["g_".len()..].to_string()),
            Some(Role::Feature) => {}
            None => {
                return Err(bad(
                    1,
                    j + 1,
                    format!("column {name:?} is not x_*, y, g_* or z"),
                ));
            }
        }
        roles.push(classify(name).expect("classified above"));
    }
    let d = roles.iter().filter(|r| matches!(r, Role::Feature)).count();
    if require_label && label_col.is_none() {
        return Err(bad(1, 1, "no `y` column".into()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut members = Vec::new();
    let mut domain = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != roles.len() {
            return Err(bad(line, 1, format!("{} cells, expected {}", record.len(), roles.len())));
        }
        let mut label = 0.0;
        for (j, (cell, role)) in record.iter().zip(&roles).enumerate() {
            let number = |cell: &str| {
                cell.parse::<f64>()
                    .map_err(|_| bad(line, j + 1, format!("not a number: {cell:?}")))
            };
            match role {
                Role::Feature if cell.is_empty() => features.push(f64::NAN),
                Role::Feature => {
                    let v = number(cell)?;
                    if v.is_nan() {
                        return Err(bad(line, j + 1, "use an empty cell for a missing value".into()));
                    }
                    features.push(v);
                }
                Role::Label if cell.is_empty() => {
                    return Err(bad(line, j + 1, "empty label".into()));
                }
                Role::Label => label = number(cell)?,
                Role::Group => members.push(match cell {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    _ => return Err(bad(line, j + 1, format!("group cell must be 0 or 1, got {cell:?}"))),
                }),
                Role::Domain => domain.push(
                    Domain::from_tag(cell)
                        .ok_or_else(|| bad(line, j + 1, format!("domain must be so or ta, got {cell:?}")))?,
                ),
            }
        }
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(bad(2, 1, "dataset has no rows".into()));
    }
    let mut data = Dataset::from_flat(n, d, features, labels)?;
    if !group_names.is_empty() {
        data = data.with_groups(GroupColumns {
            names: group_names,
            members,
        })?;
    }
    if domain_col.is_some() {
        data = data.with_domain(domain)?;
    }
    Ok(data)
}

/// CSV text of `data` in the layout [`load_dataset`] reads. Reals use the
/// shortest representation that parses back to the same value.
pub fn dataset_csv(data: &Dataset) -> CliResult<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..data.d()).map(|j| format!("x_{j}")).collect();
    header.push("y".into());
    if let Some(g) = data.groups() {
        header.extend(g.names.iter().map(|name| format!("g_{name}")));
    }
    if data.domain().is_some() {
        header.push("z".into());
    }
    writer.write_record(&header)?;
    let mask = data.miss_mask();
    for i in 0..data.n() {
        let mut row: Vec<String> = data
            .row(i)
            .iter()
            .enumerate()
            .map(|(j, v)| match mask {
                Some(m) if !m[i * data.d() + j] => String::new(),
                _ => v.to_string(),
            })
            .collect();
        row.push(data.label(i).to_string());
        if let Some(g) = data.groups() {
            let w = g.len();
            row.extend(g.members[i * w..(i + 1) * w].iter().map(|&b| u8::from(b).to_string()));
        }
        if let Some(z) = data.domain() {
            row.push(z[i].tag().to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| CliError::Config(e.to_string()))?;
    writer
        .into_inner()
        .map_err(|e| CliError::Config(format!("csv buffer: {e}")))
}

pub fn save_dataset(data: &Dataset, path: &Path) -> CliResult<()> {
    let bytes = dataset_csv(data)?;
    let mut file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    file.write_all(&bytes).map_err(|e| CliError::io(path, e))
}

/// Group masks from the dataset's `g_*` columns.
pub fn group_masks(data: &Dataset) -> Vec<(String, Vec<bool>)> {
    match data.groups() {
        Some(g) => (0..g.len()).map(|k| (g.names[k].clone(), g.column(k).collect())).collect(),
        None => Vec::new(),
    }
}
