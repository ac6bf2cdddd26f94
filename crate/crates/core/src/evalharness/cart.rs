//! CART classification tree with Gini impurity.

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 20,
            min_samples_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    root: Node,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    // lowest class index wins ties
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    x: &'a [&'a [f64]],
    y: &'a [usize],
    classes: usize,
    params: &'a TreeParams,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best (feature, threshold, weighted child impurity); features and
    /// thresholds scanned in ascending order, first strict improvement kept.
    fn best_split(&self, idx: &[usize], parent: f64) -> Option<(usize, f64)> {
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let dims = self.x[idx[0]].len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in 0..dims {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.classes];
            let mut right = self.counts(idx);
            for pos in 0..n - 1 {
                let i = order[pos];
                left[self.y[i]] += 1;
                right[self.y[i]] -= 1;
                let nl = pos + 1;
                let nr = n - nl;
                let (a, b) = (self.x[i][f], self.x[order[pos + 1]][f]);
                if a == b || nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                if best.is_none_or(|(_, _, s)| impurity < s - 1e-12) {
                    best = Some((f, a + (b - a) / 2.0, impurity));
                }
            }
        }
        best.filter(|(_, _, s)| *s <= parent + 1e-12).map(|(f, t, _)| (f, t))
    }

    fn build(&self, idx: Vec<usize>, depth: usize) -> Node {
        let counts = self.counts(&idx);
        let label = majority(&counts);
        let impurity = gini(&counts, idx.len());
        if impurity == 0.0 || depth >= self.params.max_depth || idx.len() < 2 * self.params.min_samples_leaf.max(1) {
            return Node::Leaf(label);
        }
        match self.best_split(&idx, impurity) {
            None => Node::Leaf(label),
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(self.build(l, depth + 1)),
                    right: Box::new(self.build(r, depth + 1)),
                }
            }
        }
    }
}

impl DecisionTree {
    /// `y` holds class indices below `classes`.
    pub fn fit(x: &[&[f64]], y: &[usize], classes: usize, params: &TreeParams) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(!x.is_empty(), "cannot fit a tree on no data");
        let builder = Builder { x, y, classes, params };
        Self {
            root: builder.build((0..x.len()).collect(), 0),
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(c) => return *c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }
}
