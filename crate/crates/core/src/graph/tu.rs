//! Import of the plain-text benchmark layout (`DS_A.txt`, `DS_graph_indicator.txt`,
//! `DS_graph_labels.txt`, optional `DS_node_labels.txt` / `DS_node_attributes.txt`).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::{Graph, GraphSet};
use crate::autodiff::Matrix;
use crate::error::{BundleError, Error, Result};

/// Fields of each non-empty line, tagged with its 1-based line number.
type Rows = Vec<(usize, Vec<String>)>;

fn read_rows(dir: &Path, file: &str, required: bool) -> Result<Option<Rows>> {
    let path = dir.join(file);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && !required => return Ok(None),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(BundleError::Missing { file: path }.into()),
        Err(e) => return Err(Error::io(path, e)),
    };
    Ok(Some(
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.split(',').map(|s| s.trim().to_string()).collect()))
            .collect(),
    ))
}

fn num<T: std::str::FromStr>(dir: &Path, file: &str, line: usize, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| BundleError::Parse { file: dir.join(file), line, msg: format!("cannot parse '{raw}'") }.into())
}

/// Converts a directory in the benchmark text layout into a [`GraphSet`].
///
/// Discrete node labels become one-hot features (sorted label values map to
/// columns); otherwise continuous node attributes are used; otherwise the graphs
/// are featureless. Graph labels are remapped to `0..C` in sorted order.
/// Self-loops and duplicate edges are dropped.
pub fn import_tu(dir: impl AsRef<Path>, name: &str) -> Result<GraphSet> {
    let dir = dir.as_ref();
    let f_ind = format!("{name}_graph_indicator.txt");
    let f_adj = format!("{name}_A.txt");
    let f_glab = format!("{name}_graph_labels.txt");
    let f_nlab = format!("{name}_node_labels.txt");
    let f_attr = format!("{name}_node_attributes.txt");

    let indicator: Vec<usize> = read_rows(dir, &f_ind, true)?
        .unwrap()
        .into_iter()
        .map(|(line, f)| num::<usize>(dir, &f_ind, line, &f[0]))
        .collect::<Result<_>>()?;
    let graph_labels_raw: Vec<i64> = read_rows(dir, &f_glab, true)?
        .unwrap()
        .into_iter()
        .map(|(line, f)| num::<i64>(dir, &f_glab, line, &f[0]))
        .collect::<Result<_>>()?;
    let n_graphs = graph_labels_raw.len();
    let n = indicator.len();

    // local index of each global node (1-based ids in the files)
    let mut sizes = vec![0usize; n_graphs];
    let mut local = vec![0usize; n];
    for (v, &g) in indicator.iter().enumerate() {
        if g == 0 || g > n_graphs {
            return Err(BundleError::Inconsistent {
                file: dir.join(&f_ind),
                line: v + 1,
                msg: format!("graph id {g} outside 1..={n_graphs}"),
            }
            .into());
        }
        local[v] = sizes[g - 1];
        sizes[g - 1] += 1;
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for (line, f) in read_rows(dir, &f_adj, true)?.unwrap() {
        if f.len() != 2 {
            return Err(BundleError::Parse { file: dir.join(&f_adj), line, msg: "expected 'row, col'".into() }.into());
        }
        let u: usize = num(dir, &f_adj, line, &f[0])?;
        let v: usize = num(dir, &f_adj, line, &f[1])?;
        if u == 0 || v == 0 || u > n || v > n {
            return Err(BundleError::NonSquare { file: dir.join(&f_adj), line, msg: format!("node id outside 1..={n}") }.into());
        }
        let (gu, gv) = (indicator[u - 1], indicator[v - 1]);
        if gu != gv {
            return Err(BundleError::Inconsistent { file: dir.join(&f_adj), line, msg: format!("edge joins graphs {gu} and {gv}") }.into());
        }
        if u != v {
            edges[gu - 1].push((local[u - 1], local[v - 1]));
        }
    }

    let features: Vec<Vec<f64>> = if let Some(rows) = read_rows(dir, &f_nlab, false)? {
        let vals: Vec<i64> = rows.iter().map(|(line, f)| num::<i64>(dir, &f_nlab, *line, &f[0])).collect::<Result<_>>()?;
        if vals.len() != n {
            return Err(BundleError::Inconsistent {
                file: dir.join(&f_nlab),
                line: vals.len(),
                msg: format!("{} node labels for {n} nodes", vals.len()),
            }
            .into());
        }
        let distinct: Vec<i64> = vals.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        vals.iter()
            .map(|v| {
                let mut row = vec![0.0; distinct.len()];
                row[distinct.binary_search(v).unwrap()] = 1.0;
                row
            })
            .collect()
    } else if let Some(rows) = read_rows(dir, &f_attr, false)? {
        rows.iter()
            .map(|(line, f)| f.iter().map(|s| num::<f64>(dir, &f_attr, *line, s)).collect::<Result<Vec<f64>>>())
            .collect::<Result<_>>()?
    } else {
        vec![Vec::new(); n]
    };
    let d = features.first().map_or(0, Vec::len);

    let classes: Vec<i64> = graph_labels_raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let labels: Vec<usize> = graph_labels_raw.iter().map(|l| classes.binary_search(l).unwrap()).collect();

    let mut per_graph: Vec<Vec<f64>> = vec![Vec::new(); n_graphs];
    for (v, row) in features.into_iter().enumerate() {
        per_graph[indicator[v] - 1].extend(row);
    }
    let graphs = (0..n_graphs)
        .map(|g| {
            let x = Matrix::from_vec(sizes[g], d, std::mem::take(&mut per_graph[g]))?;
            let mut e = std::mem::take(&mut edges[g]);
            e.sort_unstable();
            Graph::from_edges(format!("{}#{g}", name.to_lowercase()), sizes[g], e, x)
        })
        .collect::<Result<Vec<_>>>()?;
    GraphSet::new(name.to_lowercase(), graphs, labels, classes.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_tiny_graphs() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path();
        fs::write(p.join("T_A.txt"), "1, 2\n2, 1\n3, 4\n4, 5\n5, 5\n").unwrap();
        fs::write(p.join("T_graph_indicator.txt"), "1\n1\n2\n2\n2\n").unwrap();
        fs::write(p.join("T_graph_labels.txt"), "-1\n1\n").unwrap();
        fs::write(p.join("T_node_labels.txt"), "0\n2\n2\n0\n0\n").unwrap();
        let gs = import_tu(p, "T").unwrap();
        assert_eq!(gs.len(), 2);
        assert_eq!(gs.labels(), &[0, 1]);
        assert_eq!(gs.n_features(), 2);
        assert_eq!(gs.graphs()[1].n(), 3);
        assert_eq!(gs.graphs()[1].edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        assert_eq!(gs.graphs()[0].features().row(1), &[0.0, 1.0]);
    }
}
