//! Labeled-tree combinatorics: Prufer coding, exhaustive enumeration in
//! lexicographic Prufer order, path queries and degree-sequence counting.
//!
//! Vertices are 0-based in code; reports and the CLI print 1-based labels.

use crate::error::{LveError, Result};

/// Default enumeration cap: 9^7 labeled trees is about 4.8M.
pub const TREE_CAP: usize = 9;

/// A labeled tree on `n` vertices. Edges are stored as (min, max) pairs
/// sorted lexicographically, so the edge index order is deterministic and
/// shared with weakening vectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledTree {
    n: usize,
    edges: Vec<(usize, usize)>,
    root: usize,
    adjacency: Vec<Vec<usize>>,
}

impl LabeledTree {
    pub fn new(n: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(LveError::InvalidArgument("tree needs n >= 1".into()));
        }
        if edges.len() != n - 1 {
            return Err(LveError::InvalidArgument(format!(
                "tree on {n} vertices needs {} edges, got {}",
                n - 1,
                edges.len()
            )));
        }
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.0 == e.1 || e.1 >= n {
                return Err(LveError::InvalidArgument(format!("bad edge {:?}", e)));
            }
        }
        edges.sort_unstable();
        let mut adjacency = vec![Vec::new(); n];
        for (i, &(u, v)) in edges.iter().enumerate() {
            let _ = i;
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        let tree = Self {
            n,
            edges,
            root: 0,
            adjacency,
        };
        if !tree.is_connected() {
            return Err(LveError::InvalidArgument("edge set is not a tree".into()));
        }
        Ok(tree)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn with_root(mut self, root: usize) -> Result<Self> {
        if root >= self.n {
            return Err(LveError::OutOfRange {
                what: "root",
                got: root,
                limit: self.n,
            });
        }
        self.root = root;
        Ok(self)
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|v| self.degree(v)).collect()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Edge indices along the unique path from u to v (empty if u == v).
    pub fn path_edges(&self, u: usize, v: usize) -> Result<Vec<usize>> {
        if u >= self.n || v >= self.n {
            return Err(LveError::OutOfRange {
                what: "vertex",
                got: u.max(v),
                limit: self.n,
            });
        }
        if u == v {
            return Ok(Vec::new());
        }
        // BFS from u recording parents
        let mut parent = vec![usize::MAX; self.n];
        let mut queue = std::collections::VecDeque::new();
        parent[u] = u;
        queue.push_back(u);
        while let Some(x) = queue.pop_front() {
            if x == v {
                break;
            }
            for &y in &self.adjacency[x] {
                if parent[y] == usize::MAX {
                    parent[y] = x;
                    queue.push_back(y);
                }
            }
        }
        let mut path = Vec::new();
        let mut cur = v;
        while cur != u {
            let p = parent[cur];
            path.push(self.edge_index(p, cur));
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    fn edge_index(&self, a: usize, b: usize) -> usize {
        let key = (a.min(b), a.max(b));
        self.edges.binary_search(&key).expect("edge must exist")
    }

    /// AHU canonical certificate of the unlabeled (free) tree. Isomorphic
    /// trees share a certificate regardless of labeling.
    pub fn canonical_certificate(&self) -> String {
        if self.n == 1 {
            return "()".into();
        }
        let centers = self.centers();
        let mut certs: Vec<String> = centers
            .iter()
            .map(|&c| self.rooted_certificate(c, usize::MAX))
            .collect();
        certs.sort();
        certs.into_iter().next().unwrap()
    }

    fn rooted_certificate(&self, v: usize, parent: usize) -> String {
        let mut kids: Vec<String> = self
            .adjacency[v]
            .iter()
            .filter(|&&u| u != parent)
            .map(|&u| self.rooted_certificate(u, v))
            .collect();
        kids.sort();
        format!("({})", kids.concat())
    }

    /// Center vertex or vertices (1 or 2) by iterated leaf removal.
    fn centers(&self) -> Vec<usize> {
        let mut deg = self.degrees();
        let mut remaining = self.n;
        let mut leaves: Vec<usize> = (0..self.n).filter(|&v| deg[v] <= 1).collect();
        let mut removed = vec![false; self.n];
        while remaining > 2 {
            let mut next = Vec::new();
            for &v in &leaves {
                removed[v] = true;
                remaining -= 1;
                for &u in &self.adjacency[v] {
                    if !removed[u] {
                        deg[u] -= 1;
                        if deg[u] == 1 {
                            next.push(u);
                        }
                    }
                }
            }
            leaves = next;
        }
        (0..self.n).filter(|&v| !removed[v]).collect()
    }
}

/// Prufer code: a sequence of n-2 vertex labels in bijection with labeled
/// trees on n vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruferCode {
    n: usize,
    seq: Vec<usize>,
}

impl PruferCode {
    pub fn new(n: usize, seq: Vec<usize>) -> Result<Self> {
        if n < 2 && !seq.is_empty() {
            return Err(LveError::InvalidArgument(
                "n < 2 admits only the empty code".into(),
            ));
        }
        if n >= 2 && seq.len() != n - 2 {
            return Err(LveError::InvalidArgument(format!(
                "code for n = {n} needs length {}, got {}",
                n - 2,
                seq.len()
            )));
        }
        if let Some(&bad) = seq.iter().find(|&&x| x >= n) {
            return Err(LveError::OutOfRange {
                what: "prufer label",
                got: bad,
                limit: n,
            });
        }
        Ok(Self { n, seq })
    }

    pub fn seq(&self) -> &[usize] {
        &self.seq
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Decode a Prufer code into the corresponding labeled tree.
pub fn prufer_decode(code: &PruferCode) -> LabeledTree {
    let n = code.n;
    if n == 1 {
        return LabeledTree::new(1, vec![]).unwrap();
    }
    let mut degree = vec![1usize; n];
    for &x in &code.seq {
        degree[x] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    // pointer-scan leaf extraction, O(n) per the classical algorithm
    let mut ptr = 0;
    while degree[ptr] != 1 {
        ptr += 1;
    }
    let mut leaf = ptr;
    for &x in &code.seq {
        edges.push((leaf, x));
        degree[x] -= 1;
        if degree[x] == 1 && x < ptr {
            leaf = x;
        } else {
            ptr += 1;
            while degree[ptr] != 1 {
                ptr += 1;
            }
            leaf = ptr;
        }
    }
    edges.push((leaf, n - 1));
    LabeledTree::new(n, edges).expect("prufer decode yields a tree")
}

/// Encode a labeled tree as its Prufer code (inverse of [`prufer_decode`]).
pub fn prufer_encode(tree: &LabeledTree) -> PruferCode {
    let n = tree.n();
    if n <= 2 {
        return PruferCode::new(n, vec![]).unwrap();
    }
    let mut degree = tree.degrees();
    let mut seq = Vec::with_capacity(n - 2);
    let mut parent = vec![usize::MAX; n];
    // orient the tree away from vertex n-1
    let mut stack = vec![n - 1];
    let mut seen = vec![false; n];
    seen[n - 1] = true;
    while let Some(u) = stack.pop() {
        for &v in tree.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                stack.push(v);
            }
        }
    }
    let mut ptr = 0;
    while degree[ptr] != 1 {
        ptr += 1;
    }
    let mut leaf = ptr;
    for _ in 0..n - 2 {
        let next = parent[leaf];
        seq.push(next);
        degree[next] -= 1;
        if degree[next] == 1 && next < ptr {
            leaf = next;
        } else {
            ptr += 1;
            while degree[ptr] != 1 {
                ptr += 1;
            }
            leaf = ptr;
        }
    }
    PruferCode::new(n, seq).unwrap()
}

/// Number of labeled trees on n vertices: n^(n-2) for n >= 2, 1 otherwise.
pub fn tree_count(n: usize) -> usize {
    if n <= 2 {
        1
    } else {
        n.pow((n - 2) as u32)
    }
}

/// Iterator over every labeled tree on n vertices, in lexicographic Prufer
/// order.
pub struct TreeEnumeration {
    n: usize,
    next_index: usize,
    total: usize,
}

impl TreeEnumeration {
    pub fn total(&self) -> usize {
        self.total
    }
}

/// Decode tree number `index` (lexicographic Prufer rank) on n vertices.
pub fn tree_by_index(n: usize, index: usize) -> LabeledTree {
    if n <= 2 {
        assert_eq!(index, 0);
        return if n == 1 {
            LabeledTree::new(1, vec![]).unwrap()
        } else {
            LabeledTree::new(2, vec![(0, 1)]).unwrap()
        };
    }
    let mut seq = vec![0usize; n - 2];
    let mut rem = index;
    for k in (0..n - 2).rev() {
        seq[k] = rem % n;
        rem /= n;
    }
    assert_eq!(rem, 0, "index out of range");
    prufer_decode(&PruferCode::new(n, seq).unwrap())
}

impl Iterator for TreeEnumeration {
    type Item = LabeledTree;

    fn next(&mut self) -> Option<LabeledTree> {
        if self.next_index >= self.total {
            return None;
        }
        let t = tree_by_index(self.n, self.next_index);
        self.next_index += 1;
        Some(t)
    }
}

/// Enumerate every labeled tree on n vertices exactly once.
pub fn enumerate_trees(n: usize) -> Result<TreeEnumeration> {
    enumerate_trees_capped(n, TREE_CAP)
}

pub fn enumerate_trees_capped(n: usize, cap: usize) -> Result<TreeEnumeration> {
    if n < 1 || n > cap {
        return Err(LveError::CapExceeded {
            what: "tree vertex count",
            got: n,
            cap,
        });
    }
    Ok(TreeEnumeration {
        n,
        next_index: 0,
        total: tree_count(n),
    })
}

/// Infimum of the weakening parameters along the unique u-v path; 1 when
/// u == v. `w` is indexed by the tree's edge order.
pub fn path_infimum(tree: &LabeledTree, w: &[f64], u: usize, v: usize) -> Result<f64> {
    if w.len() != tree.n() - 1 {
        return Err(LveError::InvalidArgument(format!(
            "weakening vector length {} != {}",
            w.len(),
            tree.n() - 1
        )));
    }
    if let Some(&bad) = w.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(LveError::InvalidArgument(format!(
            "weakening parameter {bad} outside [0,1]"
        )));
    }
    if u == v {
        return Ok(1.0);
    }
    let path = tree.path_edges(u, v)?;
    Ok(path.into_iter().map(|e| w[e]).fold(f64::INFINITY, f64::min))
}

/// Number of labeled trees on n vertices with the given degree sequence:
/// (n-2)! / prod (k_v - 1)!.
pub fn count_trees_with_degrees(n: usize, degrees: &[usize]) -> Result<u128> {
    if degrees.len() != n {
        return Err(LveError::InvalidArgument(format!(
            "expected {n} degrees, got {}",
            degrees.len()
        )));
    }
    if n == 1 {
        return if degrees[0] == 0 {
            Ok(1)
        } else {
            Err(LveError::InvalidArgument(
                "single vertex has degree 0".into(),
            ))
        };
    }
    let sum: usize = degrees.iter().sum();
    if sum != 2 * (n - 1) || degrees.iter().any(|&k| k == 0) {
        return Err(LveError::InvalidArgument(format!(
            "inconsistent degree sequence {:?} for n = {n}",
            degrees
        )));
    }
    fn factorial(k: usize) -> u128 {
        (1..=k as u128).product()
    }
    let mut num = factorial(n - 2);
    for &k in degrees {
        num /= factorial(k - 1);
    }
    Ok(num)
}
