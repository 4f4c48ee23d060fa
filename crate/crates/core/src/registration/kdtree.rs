use nalgebra::Point3;

#[derive(Clone, Copy, Debug)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Static 3-d tree answering exact nearest-neighbour queries. Ties in
/// distance resolve to the lowest point index, matching a linear scan.
#[derive(Clone, Debug)]
pub struct KdTree<'a> {
    points: &'a [Point3<f64>],
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(points, &mut order, &mut nodes);
        Self {
            points,
            nodes,
            root,
        }
    }

    /// Index of the nearest point and its squared distance.
    pub fn nearest(&self, query: &Point3<f64>) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        if let Some(root) = self.root {
            self.search(root, query, &mut best);
        }
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, node: usize, query: &Point3<f64>, best: &mut (usize, f64)) {
        let n = self.nodes[node];
        let d2 = (self.points[n.point] - query).norm_squared();
        if d2 < best.1 || (d2 == best.1 && n.point < best.0) {
            *best = (n.point, d2);
        }
        let diff = query[n.axis] - self.points[n.point][n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.search(c, query, best);
        }
        if let Some(c) = far {
            // `<=` keeps equal-distance candidates with smaller indices reachable
            if diff * diff <= best.1 {
                self.search(c, query, best);
            }
        }
    }
}

fn build(points: &[Point3<f64>], order: &mut [usize], nodes: &mut Vec<Node>) -> Option<usize> {
    if order.is_empty() {
        return None;
    }
    let axis = widest_axis(points, order);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let id = nodes.len();
    nodes.push(Node {
        point: order[mid],
        axis,
        left: None,
        right: None,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let left = build(points, lo, nodes);
    let right = build(points, &mut rest[1..], nodes);
    nodes[id].left = left;
    nodes[id].right = right;
    Some(id)
}

fn widest_axis(points: &[Point3<f64>], order: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0)
}
