//! Minimal static 2D KD-tree over block centroids (XY plane).
//!
//! Built once at model construction; queries are read-only and safe to run
//! concurrently. Radius queries use strict `< r` to match the neighbor
//! contract, and results are returned as unordered indices (callers sort).

pub(crate) struct KdTree2 {
    nodes: Vec<Node>,
    root: i32,
}

struct Node {
    point: [f64; 2],
    item: u32,
    axis: u8,
    left: i32,
    right: i32,
}

impl KdTree2 {
    pub fn build(points: &[[f64; 2]]) -> Self {
        let mut entries: Vec<(u32, [f64; 2])> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u32, *p))
            .collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_rec(&mut entries, 0, &mut nodes);
        Self { nodes, root }
    }

    /// Indices of all points with strict XY distance < `radius` of `query`.
    pub fn within_radius(&self, query: [f64; 2], radius: f64, out: &mut Vec<u32>) {
        out.clear();
        if self.root < 0 {
            return;
        }
        let r2 = radius * radius;
        let mut stack = vec![self.root];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            let dx = query[0] - node.point[0];
            let dy = query[1] - node.point[1];
            if dx * dx + dy * dy < r2 {
                out.push(node.item);
            }
            let delta = query[node.axis as usize] - node.point[node.axis as usize];
            let (near, far) = if delta < 0.0 {
                (node.left, node.right)
            } else {
                (node.right, node.left)
            };
            if near >= 0 {
                stack.push(near);
            }
            if far >= 0 && delta * delta < r2 {
                stack.push(far);
            }
        }
    }
}

fn build_rec(entries: &mut [(u32, [f64; 2])], depth: usize, nodes: &mut Vec<Node>) -> i32 {
    if entries.is_empty() {
        return -1;
    }
    let axis = depth % 2;
    let mid = entries.len() / 2;
    entries.select_nth_unstable_by(mid, |a, b| {
        a.1[axis].partial_cmp(&b.1[axis]).expect("finite coordinate")
    });
    let (item, point) = entries[mid];
    let (lo, rest) = entries.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_rec(lo, depth + 1, nodes);
    let right = build_rec(hi, depth + 1, nodes);
    nodes.push(Node {
        point,
        item,
        axis: axis as u8,
        left,
        right,
    });
    nodes.len() as i32 - 1
}
