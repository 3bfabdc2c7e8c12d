//! Bipartite implicit-feedback graph: ingestion, symmetric degree
//! normalization, and one-hop structure-aware propagation.

use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Immutable bipartite user–item graph in CSR form on both sides.
///
/// `user_adj[u]` lists the items of user `u` in ascending order and
/// `item_adj[i]` the users of item `i`; the two encode the same edge
/// set. Degrees equal adjacency lengths; edges are deduplicated.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_offsets: Vec<usize>,
    user_items: Vec<u32>,
    item_offsets: Vec<usize>,
    item_users: Vec<u32>,
}

impl InteractionGraph {
    /// Builds a graph from raw edges. Duplicates collapse to a single
    /// edge; `num_users`/`num_items` may exceed the largest index so
    /// isolated nodes are representable.
    pub fn from_edges(num_users: usize, num_items: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut sorted: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for &(u, i) in edges {
            if (u as usize) >= num_users || (i as usize) >= num_items {
                return Err(Error::dimension(
                    "from_edges",
                    format!("edge ({u}, {i}) out of range for {num_users} users x {num_items} items"),
                ));
            }
            sorted.push((u, i));
        }
        sorted.sort_unstable();
        sorted.dedup();

        let mut user_offsets = vec![0usize; num_users + 1];
        for &(u, _) in &sorted {
            user_offsets[u as usize + 1] += 1;
        }
        for k in 0..num_users {
            user_offsets[k + 1] += user_offsets[k];
        }
        let user_items: Vec<u32> = sorted.iter().map(|&(_, i)| i).collect();

        let mut item_offsets = vec![0usize; num_items + 1];
        for &(_, i) in &sorted {
            item_offsets[i as usize + 1] += 1;
        }
        for k in 0..num_items {
            item_offsets[k + 1] += item_offsets[k];
        }
        let mut cursor = item_offsets.clone();
        let mut item_users = vec![0u32; sorted.len()];
        for &(u, i) in &sorted {
            item_users[cursor[i as usize]] = u;
            cursor[i as usize] += 1;
        }

        Ok(InteractionGraph {
            num_users,
            num_items,
            user_offsets,
            user_items,
            item_offsets,
            item_users,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_items.len()
    }

    /// Items of `u`, ascending.
    pub fn items_of(&self, u: usize) -> &[u32] {
        &self.user_items[self.user_offsets[u]..self.user_offsets[u + 1]]
    }

    /// Users of `i`, ascending.
    pub fn users_of(&self, i: usize) -> &[u32] {
        &self.item_users[self.item_offsets[i]..self.item_offsets[i + 1]]
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_offsets[u + 1] - self.user_offsets[u]
    }

    pub fn item_degree(&self, i: usize) -> usize {
        self.item_offsets[i + 1] - self.item_offsets[i]
    }

    pub fn has_edge(&self, u: usize, i: usize) -> bool {
        self.items_of(u).binary_search(&(i as u32)).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_users).flat_map(move |u| {
            self.items_of(u).iter().map(move |&i| (u as u32, i))
        })
    }

    /// Entry of the symmetrically normalized adjacency: for an edge
    /// `(u, i)` this is `1 / sqrt(deg(u) * deg(i))`, for a non-edge 0.
    pub fn normalized_entry(&self, u: usize, i: usize) -> f64 {
        if u >= self.num_users || i >= self.num_items || !self.has_edge(u, i) {
            return 0.0;
        }
        1.0 / ((self.user_degree(u) * self.item_degree(i)) as f64).sqrt()
    }

    /// `z_user[u] = sum over items i of u of e_item[i] / sqrt(deg(u) deg(i))`.
    /// Zero-degree users yield zero rows.
    pub fn propagate_to_users(&self, item_features: &Tensor2) -> Result<Tensor2> {
        if item_features.rows() != self.num_items {
            return Err(Error::dimension(
                "propagate_to_users",
                format!(
                    "item features have {} rows, graph has {} items",
                    item_features.rows(),
                    self.num_items
                ),
            ));
        }
        let mut out = Tensor2::zeros(self.num_users, item_features.cols());
        for u in 0..self.num_users {
            let items = self.items_of(u);
            if items.is_empty() {
                continue;
            }
            let du = items.len() as f64;
            let row = out.row_mut(u);
            for &i in items {
                let di = self.item_degree(i as usize) as f64;
                let w = 1.0 / (du * di).sqrt();
                for (o, &e) in row.iter_mut().zip(item_features.row(i as usize)) {
                    *o += w * e;
                }
            }
        }
        Ok(out)
    }

    /// Symmetric propagation onto items from user features.
    pub fn propagate_to_items(&self, user_features: &Tensor2) -> Result<Tensor2> {
        if user_features.rows() != self.num_users {
            return Err(Error::dimension(
                "propagate_to_items",
                format!(
                    "user features have {} rows, graph has {} users",
                    user_features.rows(),
                    self.num_users
                ),
            ));
        }
        let mut out = Tensor2::zeros(self.num_items, user_features.cols());
        for i in 0..self.num_items {
            let users = self.users_of(i);
            if users.is_empty() {
                continue;
            }
            let di = users.len() as f64;
            let row = out.row_mut(i);
            for &u in users {
                let du = self.user_degree(u as usize) as f64;
                let w = 1.0 / (du * di).sqrt();
                for (o, &e) in row.iter_mut().zip(user_features.row(u as usize)) {
                    *o += w * e;
                }
            }
        }
        Ok(out)
    }
}

/// Train/test split over one interaction universe. The test side is a
/// per-user sorted list of held-out items; a pair never appears in
/// both.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: InteractionGraph,
    pub test: Vec<Vec<u32>>,
}

impl DatasetSplit {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }
}

fn parse_interactions(path: &Path) -> Result<Vec<(u32, u32)>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)
        .map_err(|_| Error::Usage(format!("dataset not found: {display}")))?;
    let reader = BufReader::new(file);
    let mut edges = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let parse = |field: Option<&str>, lineno: usize| -> Result<u32> {
            field
                .ok_or(())
                .and_then(|f| f.parse::<u32>().map_err(|_| ()))
                .map_err(|_| Error::Parse {
                    path: display.clone(),
                    line: lineno + 1,
                    detail: format!("expected \"user_id item_id\", got {trimmed:?}"),
                })
        };
        let u = parse(fields.next(), lineno)?;
        let i = parse(fields.next(), lineno)?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                detail: format!("trailing fields after \"user_id item_id\" in {trimmed:?}"),
            });
        }
        edges.push((u, i));
    }
    Ok(edges)
}

/// Loads a train/test pair of interaction files. One interaction per
/// line as two base-10 integers `user_id item_id`; `#` lines are
/// comments. User and item counts are inferred as max index + 1 across
/// both splits, so index gaps produce isolated nodes.
pub fn load_dataset(train_path: &Path, test_path: &Path) -> Result<DatasetSplit> {
    let train_edges = parse_interactions(train_path)?;
    let test_edges = parse_interactions(test_path)?;

    let mut num_users = 0usize;
    let mut num_items = 0usize;
    for &(u, i) in train_edges.iter().chain(&test_edges) {
        num_users = num_users.max(u as usize + 1);
        num_items = num_items.max(i as usize + 1);
    }

    let train = InteractionGraph::from_edges(num_users, num_items, &train_edges)?;
    let mut test: Vec<Vec<u32>> = vec![Vec::new(); num_users];
    for &(u, i) in &test_edges {
        test[u as usize].push(i);
    }
    for (u, items) in test.iter_mut().enumerate() {
        items.sort_unstable();
        items.dedup();
        for &i in items.iter() {
            if train.has_edge(u, i as usize) {
                return Err(Error::Parse {
                    path: test_path.display().to_string(),
                    line: 0,
                    detail: format!("pair ({u}, {i}) appears in both train and test"),
                });
            }
        }
    }
    Ok(DatasetSplit { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::xavier_init;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_small_file_and_infers_counts() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(&dir, "train.txt", "0 0\n0 1\n");
        let test = write_file(&dir, "test.txt", "");
        let split = load_dataset(&train, &test).unwrap();
        assert_eq!(split.num_users(), 1);
        assert_eq!(split.num_items(), 2);
        assert_eq!(split.train.user_degree(0), 2);
    }

    #[test]
    fn duplicate_lines_collapse_to_one_edge() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(&dir, "train.txt", "3 7\n3 7\n");
        let test = write_file(&dir, "test.txt", "");
        let split = load_dataset(&train, &test).unwrap();
        assert_eq!(split.train.num_edges(), 1);
        assert_eq!(split.train.user_degree(3), 1);
        assert_eq!(split.train.item_degree(7), 1);
        // Index gaps are allowed: users 0..3 are isolated.
        assert_eq!(split.train.user_degree(0), 0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(&dir, "train.txt", "0 0\nbogus\n");
        let test = write_file(&dir, "test.txt", "");
        let err = load_dataset(&train, &test).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(&dir, "train.txt", "# header\n\n0 0\n");
        let test = write_file(&dir, "test.txt", "");
        let split = load_dataset(&train, &test).unwrap();
        assert_eq!(split.train.num_edges(), 1);
    }

    #[test]
    fn missing_file_is_a_usage_error() {
        let err = load_dataset(Path::new("/nonexistent/a"), Path::new("/nonexistent/b"))
            .unwrap_err();
        assert!(err.to_string().contains("dataset not found"), "{err}");
    }

    #[test]
    fn normalized_entries_match_definition() {
        // Single edge: degrees 1 and 1.
        let g = InteractionGraph::from_edges(1, 1, &[(0, 0)]).unwrap();
        assert_eq!(g.normalized_entry(0, 0), 1.0);

        let g = InteractionGraph::from_edges(2, 2, &[(0, 0), (0, 1), (1, 0)]).unwrap();
        assert!((g.normalized_entry(0, 0) - 0.5).abs() < 1e-15);
        assert!((g.normalized_entry(0, 1) - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(g.normalized_entry(1, 1), 0.0); // non-edge
    }

    /// Dense oracle: materialize D_u^{-1/2} A D_v^{-1/2} and multiply.
    fn dense_propagate(g: &InteractionGraph, item_features: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(g.num_users(), item_features.cols());
        for u in 0..g.num_users() {
            for i in 0..g.num_items() {
                let w = g.normalized_entry(u, i);
                if w == 0.0 {
                    continue;
                }
                for (o, &e) in out.row_mut(u).iter_mut().zip(item_features.row(i)) {
                    *o += w * e;
                }
            }
        }
        out
    }

    #[test]
    fn propagation_on_single_edge_copies_the_row() {
        let g = InteractionGraph::from_edges(1, 1, &[(0, 0)]).unwrap();
        let e_item = xavier_init(1, 4, 3);
        let z = g.propagate_to_users(&e_item).unwrap();
        assert_eq!(z, e_item);
    }

    #[test]
    fn zero_degree_user_gets_zero_row() {
        let g = InteractionGraph::from_edges(2, 1, &[(0, 0)]).unwrap();
        let z = g.propagate_to_users(&xavier_init(1, 3, 4)).unwrap();
        assert!(z.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csr_propagation_matches_dense_oracle() {
        let g = InteractionGraph::from_edges(2, 2, &[(0, 0), (0, 1), (1, 0)]).unwrap();
        let e_item = xavier_init(2, 5, 7);
        let fast = g.propagate_to_users(&e_item).unwrap();
        let dense = dense_propagate(&g, &e_item);
        for (a, b) in fast.data().iter().zip(dense.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_consistency_between_sides() {
        // Propagating users from item features must equal using the
        // transposed edge set with roles swapped.
        let edges = [(0, 1), (0, 2), (1, 0), (2, 2)];
        let g = InteractionGraph::from_edges(3, 3, &edges).unwrap();
        let swapped: Vec<(u32, u32)> = edges.iter().map(|&(u, i)| (i, u)).collect();
        let gt = InteractionGraph::from_edges(3, 3, &swapped).unwrap();
        let feats = xavier_init(3, 4, 9);
        let a = g.propagate_to_items(&feats).unwrap();
        let b = gt.propagate_to_users(&feats).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn propagation_is_linear_in_the_features() {
        let g = InteractionGraph::from_edges(3, 3, &[(0, 1), (1, 0), (2, 2), (0, 0)]).unwrap();
        let feats = xavier_init(3, 4, 13);
        let scaled = feats.map(|v| 2.5 * v);
        let a = g.propagate_to_users(&scaled).unwrap();
        let b = g.propagate_to_users(&feats).unwrap().map(|v| 2.5 * v);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn overlapping_train_test_pair_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let train = write_file(&dir, "train.txt", "0 0\n");
        let test = write_file(&dir, "test.txt", "0 0\n");
        let err = load_dataset(&train, &test).unwrap_err();
        assert!(err.to_string().contains("both train and test"), "{err}");
    }

    /// Full-scale splits are not shipped with the repository; point
    /// INTENTCF_DATA_DIR at a directory containing amazon_train.txt /
    /// amazon_test.txt to check the published statistics.
    #[test]
    #[ignore]
    fn amazon_book_split_statistics() {
        let dir = std::env::var("INTENTCF_DATA_DIR").expect("set INTENTCF_DATA_DIR");
        let split = load_dataset(
            Path::new(&format!("{dir}/amazon_train.txt")),
            Path::new(&format!("{dir}/amazon_test.txt")),
        )
        .unwrap();
        assert_eq!(split.num_users(), 78_578);
        assert_eq!(split.num_items(), 77_801);
        let test_edges: usize = split.test.iter().map(Vec::len).sum();
        assert_eq!(split.train.num_edges() + test_edges, 2_240_156);
    }
}
