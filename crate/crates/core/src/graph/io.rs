//! Plain-text graph files: whitespace-separated edge list, headerless CSV
//! features, one label per line (`-1` for unlabeled).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Graph, GraphError, Result};
use crate::tensor::Tensor;

/// Paths of the three files that make up a stored graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
}

impl GraphFiles {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            edges: dir.join("edges.txt"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.txt"),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads a graph. The node count is the number of feature rows; edges and
/// labels must agree with it.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
    directed: bool,
) -> Result<Graph> {
    let features = parse_features(feature_path, &read(feature_path)?)?;
    let n = features.rows();
    let edges = parse_edges(edge_path, &read(edge_path)?, n)?;
    let labels = match label_path {
        Some(p) => Some(parse_labels(p, &read(p)?, n)?),
        None => None,
    };
    Graph::new(n, edges, features, labels, None, directed)
}

fn parse_features(path: &Path, text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                match tok.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_err(path, idx + 1, format!("invalid feature value {tok:?}"))),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    idx + 1,
                    format!("row has {} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no feature rows"));
    }
    Ok(Tensor::from_rows(&rows)?)
}

fn parse_edges(path: &Path, text: &str, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, idx + 1, "expected two node ids"));
        };
        let node = |tok: &str| -> Result<usize> {
            let id: usize = tok
                .parse()
                .map_err(|_| parse_err(path, idx + 1, format!("invalid node id {tok:?}")))?;
            if id >= n {
                return Err(parse_err(
                    path,
                    idx + 1,
                    format!("node {id} out of range for {n} feature rows"),
                ));
            }
            Ok(id)
        };
        edges.push((node(a)?, node(b)?));
    }
    Ok(edges)
}

fn parse_labels(path: &Path, text: &str, n: usize) -> Result<Vec<Option<usize>>> {
    let mut labels = Vec::with_capacity(n);
    let mut last_line = 0;
    for (idx, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        last_line = idx + 1;
        let label = match tok.parse::<i64>() {
            Ok(-1) => None,
            Ok(v) if v >= 0 => Some(v as usize),
            _ => return Err(parse_err(path, idx + 1, format!("unknown label token {tok:?}"))),
        };
        labels.push(label);
    }
    if labels.len() != n {
        return Err(parse_err(
            path,
            last_line.max(1),
            format!("{} labels for {n} nodes", labels.len()),
        ));
    }
    Ok(labels)
}

/// Writes `g` to the standard file names inside `dir`, creating it if
/// needed. Floats are written with shortest round-trip formatting.
pub fn write_graph(g: &Graph, dir: &Path) -> Result<GraphFiles> {
    let files = GraphFiles::in_dir(dir);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GraphError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;

    let mut text = String::new();
    for &(u, v) in g.edges() {
        let _ = writeln!(text, "{u} {v}");
    }
    fs::write(&files.edges, &text).map_err(io(&files.edges))?;

    text.clear();
    for i in 0..g.num_nodes() {
        let row = g.features().row(i);
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                text.push(',');
            }
            let _ = write!(text, "{x:?}");
        }
        text.push('\n');
    }
    fs::write(&files.features, &text).map_err(io(&files.features))?;

    text.clear();
    if let Some(labels) = g.labels() {
        for l in labels {
            match l {
                Some(l) => {
                    let _ = writeln!(text, "{l}");
                }
                None => text.push_str("-1\n"),
            }
        }
    }
    fs::write(&files.labels, &text).map_err(io(&files.labels))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, edges: &str, features: &str, labels: &str) -> GraphFiles {
        let files = GraphFiles::in_dir(dir);
        fs::write(&files.edges, edges).unwrap();
        fs::write(&files.features, features).unwrap();
        fs::write(&files.labels, labels).unwrap();
        files
    }

    #[test]
    fn loads_small_graph() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_files(dir.path(), "# comment\n0 1\n1 2\n", "1,0\n0,1\n1,1\n", "0\n0\n1\n");
        let g = load_graph(&f.edges, &f.features, Some(&f.labels), false).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.class_count(), 2);
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn reverse_duplicates_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_files(dir.path(), "0 1\n1 0\n", "1\n2\n", "0\n1\n");
        let g = load_graph(&f.edges, &f.features, Some(&f.labels), false).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn out_of_range_edge_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_files(dir.path(), "0 1\n0 9\n", "1\n2\n3\n", "0\n0\n1\n");
        let err = load_graph(&f.edges, &f.features, Some(&f.labels), false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("edges.txt:2"), "{msg}");
        assert!(msg.contains("node 9"), "{msg}");
    }

    #[test]
    fn ragged_features_and_bad_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_files(dir.path(), "0 1\n", "1,2\n3\n", "0\n1\n");
        let msg = load_graph(&f.edges, &f.features, None, false).unwrap_err().to_string();
        assert!(msg.contains("features.csv:2"), "{msg}");

        let f = write_files(dir.path(), "0 1\n", "1\n2\n", "0\nfoo\n");
        let msg = load_graph(&f.edges, &f.features, Some(&f.labels), false)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("labels.txt:2"), "{msg}");
    }

    #[test]
    fn unlabeled_marker() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_files(dir.path(), "0 1\n", "1\n2\n", "-1\n3\n");
        let g = load_graph(&f.edges, &f.features, Some(&f.labels), false).unwrap();
        assert_eq!(g.labels().unwrap(), &[None, Some(3)]);
        assert_eq!(g.class_count(), 4);
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let features = Tensor::from_rows(&[vec![0.1, -2.5], vec![1e-17, 3.0], vec![0.3, 0.7]]).unwrap();
        let g = Graph::new(3, [(0, 1), (2, 1)], features, Some(vec![Some(0), None, Some(1)]), None, false)
            .unwrap();
        let files = write_graph(&g, dir.path()).unwrap();
        let back = load_graph(&files.edges, &files.features, Some(&files.labels), false).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let f = GraphFiles::in_dir(dir.path());
        assert!(matches!(
            load_graph(&f.edges, &f.features, None, false),
            Err(GraphError::Io { .. })
        ));
    }
}
