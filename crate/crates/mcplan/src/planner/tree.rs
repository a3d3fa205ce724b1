//! Search tree over validated configurations.
//!
//! Each non-root node stores the chain of intermediate configurations
//! that validated its edge, ordered from the parent toward the node,
//! spaced no farther than the motion resolution apart. Nearest-neighbor
//! queries run either as a linear scan or through an incrementally
//! grown k-d tree; both are exact and break distance ties toward the
//! lower node index, so the structure choice never changes a result.

/// Dimension threshold above which the k-d tree stops paying off and
/// queries fall back to the linear scan.
const KD_MAX_DOF: usize = 10;
/// Below this many nodes the scan is cheaper than the tree walk.
const KD_MIN_NODES: usize = 64;

struct Node {
    config: Vec<f64>,
    parent: Option<usize>,
    /// Validated interior configurations from the parent (exclusive)
    /// to this node (exclusive), in walk order.
    chain: Vec<Vec<f64>>,
    /// Dynamic-domain radius; `None` until an extension from this node
    /// fails.
    domain: Option<f64>,
}

struct KdNode {
    node: usize,
    dim: usize,
    left: Option<usize>,
    right: Option<usize>,
}

pub struct Tree {
    dof: usize,
    nodes: Vec<Node>,
    kd: Vec<KdNode>,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        sum += d * d;
    }
    sum
}

impl Tree {
    pub fn new(root: Vec<f64>) -> Self {
        let dof = root.len();
        let mut tree = Tree {
            dof,
            nodes: Vec::new(),
            kd: Vec::new(),
        };
        tree.push(Node {
            config: root,
            parent: None,
            chain: Vec::new(),
            domain: None,
        });
        tree
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn config(&self, index: usize) -> &[f64] {
        &self.nodes[index].config
    }

    #[cfg(test)]
    pub fn parent(&self, index: usize) -> Option<usize> {
        self.nodes[index].parent
    }

    pub fn chain(&self, index: usize) -> &[Vec<f64>] {
        &self.nodes[index].chain
    }

    pub fn domain(&self, index: usize) -> Option<f64> {
        self.nodes[index].domain
    }

    pub fn set_domain(&mut self, index: usize, radius: f64) {
        self.nodes[index].domain = Some(radius);
    }

    pub fn add_child(&mut self, parent: usize, config: Vec<f64>, chain: Vec<Vec<f64>>) -> usize {
        assert_eq!(config.len(), self.dof);
        self.push(Node {
            config,
            parent: Some(parent),
            chain,
            domain: None,
        })
    }

    fn push(&mut self, node: Node) -> usize {
        let index = self.nodes.len();
        self.nodes.push(node);
        self.kd_insert(index);
        index
    }

    /// Index of the node closest to `q` in the Euclidean metric; ties
    /// go to the lower index.
    pub fn nearest(&self, q: &[f64]) -> usize {
        if self.dof > KD_MAX_DOF || self.nodes.len() < KD_MIN_NODES {
            self.nearest_linear(q)
        } else {
            self.nearest_kd(q)
        }
    }

    fn nearest_linear(&self, q: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d2 = dist_sq(q, &self.nodes[0].config);
        for (index, node) in self.nodes.iter().enumerate().skip(1) {
            let d2 = dist_sq(q, &node.config);
            if d2 < best_d2 {
                best = index;
                best_d2 = d2;
            }
        }
        best
    }

    fn kd_insert(&mut self, node: usize) {
        if self.kd.is_empty() {
            self.kd.push(KdNode {
                node,
                dim: 0,
                left: None,
                right: None,
            });
            return;
        }
        let mut at = 0;
        let mut depth = 0;
        loop {
            let dim = depth % self.dof;
            let goes_left =
                self.nodes[node].config[dim] < self.nodes[self.kd[at].node].config[dim];
            let slot = if goes_left {
                self.kd[at].left
            } else {
                self.kd[at].right
            };
            match slot {
                Some(next) => {
                    at = next;
                    depth += 1;
                }
                None => {
                    let new_index = self.kd.len();
                    self.kd.push(KdNode {
                        node,
                        dim: (depth + 1) % self.dof,
                        left: None,
                        right: None,
                    });
                    if goes_left {
                        self.kd[at].left = Some(new_index);
                    } else {
                        self.kd[at].right = Some(new_index);
                    }
                    return;
                }
            }
        }
    }

    fn nearest_kd(&self, q: &[f64]) -> usize {
        let mut best = (dist_sq(q, &self.nodes[self.kd[0].node].config), self.kd[0].node);
        self.kd_descend(0, q, &mut best);
        best.1
    }

    fn kd_descend(&self, at: usize, q: &[f64], best: &mut (f64, usize)) {
        let entry = &self.kd[at];
        let candidate = (dist_sq(q, &self.nodes[entry.node].config), entry.node);
        if candidate < *best {
            *best = candidate;
        }
        let diff = q[entry.dim] - self.nodes[entry.node].config[entry.dim];
        let (near, far) = if diff < 0.0 {
            (entry.left, entry.right)
        } else {
            (entry.right, entry.left)
        };
        if let Some(side) = near {
            self.kd_descend(side, q, best);
        }
        // <= keeps equal-distance nodes reachable so the lower index
        // can still win the tie.
        if let Some(side) = far {
            if diff * diff <= best.0 {
                self.kd_descend(side, q, best);
            }
        }
    }

    /// Node indices from the root to `index`, inclusive.
    pub fn path_to_root(&self, index: usize) -> Vec<usize> {
        let mut path = vec![index];
        let mut at = index;
        while let Some(parent) = self.nodes[at].parent {
            path.push(parent);
            at = parent;
        }
        path.reverse();
        path
    }
}
