//! Edge adjacency contexts: for edge `r` the set of other edges sharing an
//! endpoint with it.
//!
//! Reductions over every context are computed in `O(edges)` by grouping each
//! entity's incident edges by their other endpoint and keeping prefix/suffix
//! folds over those groups. Folds run in the log domain, so weights never
//! overflow and no subtraction is involved.

/// Flat log-domain accumulators: entry `i` stands for `exp(max[i]) * acc[i]`.
#[derive(Clone, Debug)]
pub struct LseBuffer {
    pub width: usize,
    pub max: Vec<f64>,
    pub acc: Vec<f64>,
}

impl LseBuffer {
    pub fn empty(len: usize, width: usize) -> Self {
        Self {
            width,
            max: vec![f64::NEG_INFINITY; len],
            acc: vec![0.0; len * width],
        }
    }

    pub fn len(&self) -> usize {
        self.max.len()
    }

    pub fn is_empty(&self) -> bool {
        self.max.is_empty()
    }

    pub fn acc(&self, i: usize) -> &[f64] {
        &self.acc[i * self.width..(i + 1) * self.width]
    }

    /// Folds term `exp(log_weight) * x` into slot `i`.
    pub fn push(&mut self, i: usize, log_weight: f64, x: &[f64]) {
        let w = self.width;
        lse_add(
            &mut self.max[i],
            &mut self.acc[i * w..(i + 1) * w],
            log_weight,
            x,
        );
    }

    fn merge_from(&mut self, i: usize, other: &LseBuffer, j: usize) {
        let w = self.width;
        let (m2, a2) = (other.max[j], &other.acc[j * w..(j + 1) * w]);
        lse_add(&mut self.max[i], &mut self.acc[i * w..(i + 1) * w], m2, a2);
    }
}

fn lse_add(max: &mut f64, acc: &mut [f64], m2: f64, x: &[f64]) {
    if m2 == f64::NEG_INFINITY {
        return;
    }
    if *max == f64::NEG_INFINITY {
        *max = m2;
        acc.copy_from_slice(x);
        return;
    }
    if m2 <= *max {
        let s = (m2 - *max).exp();
        for (a, b) in acc.iter_mut().zip(x) {
            *a += s * b;
        }
    } else {
        let s = (*max - m2).exp();
        for (a, b) in acc.iter_mut().zip(x) {
            *a = *a * s + b;
        }
        *max = m2;
    }
}

#[derive(Clone, Debug)]
struct Group {
    other: usize,
    start: usize,
    end: usize,
}

#[derive(Clone, Debug)]
pub struct EdgeContexts {
    endpoints: Vec<(usize, usize)>,
    /// Per entity, range into `groups`.
    entity_groups: Vec<(usize, usize)>,
    groups: Vec<Group>,
    group_edges: Vec<usize>,
    /// Per edge, global group index on the head side and on the tail side.
    edge_groups: Vec<(usize, usize)>,
}

impl EdgeContexts {
    /// `endpoints[r] = (head, tail)` as local entity indices `< n_entities`.
    pub fn new(n_entities: usize, endpoints: &[(usize, usize)]) -> Self {
        let mut per_entity: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_entities];
        for (r, &(h, t)) in endpoints.iter().enumerate() {
            per_entity[h].push((t, r));
            if t != h {
                per_entity[t].push((h, r));
            }
        }
        let mut entity_groups = Vec::with_capacity(n_entities);
        let mut groups = Vec::new();
        let mut group_edges = Vec::with_capacity(endpoints.len() * 2);
        for list in &mut per_entity {
            list.sort_unstable();
            let first = groups.len();
            let mut i = 0;
            while i < list.len() {
                let other = list[i].0;
                let start = group_edges.len();
                while i < list.len() && list[i].0 == other {
                    group_edges.push(list[i].1);
                    i += 1;
                }
                groups.push(Group {
                    other,
                    start,
                    end: group_edges.len(),
                });
            }
            entity_groups.push((first, groups.len()));
        }
        let find = |u: usize, other: usize| -> usize {
            let (a, b) = entity_groups[u];
            a + groups[a..b]
                .binary_search_by_key(&other, |g: &Group| g.other)
                .expect("edge endpoint group")
        };
        let edge_groups = endpoints
            .iter()
            .map(|&(h, t)| (find(h, t), find(t, h)))
            .collect();
        Self {
            endpoints: endpoints.to_vec(),
            entity_groups,
            groups,
            group_edges,
            edge_groups,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.endpoints.len()
    }

    /// Explicit context of `r`, ascending. Linear in the context size.
    pub fn context_of(&self, r: usize) -> Vec<usize> {
        let (h, t) = self.endpoints[r];
        let mut out = Vec::new();
        for u in [h, t] {
            let (a, b) = self.entity_groups[u];
            for g in &self.groups[a..b] {
                out.extend(self.group_edges[g.start..g.end].iter().filter(|&&e| e != r));
            }
            if h == t {
                break;
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// For every edge `r`, folds the per-edge items of all edges in its context.
    pub fn fold(&self, items: &LseBuffer) -> LseBuffer {
        let w = items.width;
        let n_groups = self.groups.len();
        let mut group_acc = LseBuffer::empty(n_groups, w);
        for (g, grp) in self.groups.iter().enumerate() {
            for &e in &self.group_edges[grp.start..grp.end] {
                group_acc.merge_from(g, items, e);
            }
        }
        // prefix[u][p] folds groups [0, p), suffix[u][p] folds [p, k).
        let n_slots = n_groups + self.entity_groups.len();
        let mut prefix = LseBuffer::empty(n_slots, w);
        let mut suffix = LseBuffer::empty(n_slots, w);
        let mut slot_base = Vec::with_capacity(self.entity_groups.len());
        let mut base = 0;
        for &(a, b) in &self.entity_groups {
            slot_base.push(base);
            let k = b - a;
            for p in 1..=k {
                let (dst, src) = (base + p, base + p - 1);
                prefix.max[dst] = prefix.max[src];
                prefix.acc.copy_within(src * w..(src + 1) * w, dst * w);
                prefix.merge_from(dst, &group_acc, a + p - 1);
            }
            for p in (0..k).rev() {
                let (dst, src) = (base + p, base + p + 1);
                suffix.max[dst] = suffix.max[src];
                suffix.acc.copy_within(src * w..(src + 1) * w, dst * w);
                suffix.merge_from(dst, &group_acc, a + p);
            }
            base += k + 1;
        }
        let mut out = LseBuffer::empty(self.endpoints.len(), w);
        for (r, &(h, t)) in self.endpoints.iter().enumerate() {
            let (gh, gt) = self.edge_groups[r];
            let sides: &[(usize, usize)] = if h == t {
                &[(h, gh)][..]
            } else {
                &[(h, gh), (t, gt)][..]
            };
            for &(u, g) in sides {
                let p = g - self.entity_groups[u].0;
                let s = slot_base[u];
                out.merge_from(r, &prefix, s + p);
                out.merge_from(r, &suffix, s + p + 1);
            }
            let grp = &self.groups[gh];
            for &e in &self.group_edges[grp.start..grp.end] {
                if e != r {
                    out.merge_from(r, items, e);
                }
            }
        }
        out
    }
}
