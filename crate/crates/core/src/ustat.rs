//! U-statistics, difference operators, the kernels `T_n F`, and the
//! partition algebra behind products of U-statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::estimate::{mean_se, Method, MomentEstimate};
use crate::geometry::{plate_area, plate_pair_chord_length, plates_triple_intersect, segments_intersect};
use crate::process::{Configuration, IntensityMeasure, Particle};
use crate::seeds::rng_from_seed;

pub type KernelFn = Arc<dyn Fn(&[Particle]) -> f64 + Send + Sync>;

/// Largest total order accepted by the partition enumeration.
pub const MAX_TOTAL_ORDER: usize = 12;

/// `F(x) = sum over ordered k-tuples of distinct particles of f`.
#[derive(Clone)]
pub struct UStatistic {
    pub name: String,
    order: usize,
    kernel: KernelFn,
}

impl fmt::Debug for UStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UStatistic").field("name", &self.name).field("order", &self.order).finish()
    }
}

impl UStatistic {
    /// A kernel declared non-symmetric is replaced by its symmetrization.
    pub fn new<F>(name: impl Into<String>, order: usize, symmetric: bool, kernel: F) -> Result<Self>
    where
        F: Fn(&[Particle]) -> f64 + Send + Sync + 'static,
    {
        if order == 0 {
            return Err(Error::InvalidOrders(vec![0]));
        }
        let kernel: KernelFn = Arc::new(kernel);
        let kernel = if symmetric { kernel } else { symmetrize(order, kernel) };
        Ok(Self { name: name.into(), order, kernel })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn kernel(&self, args: &[Particle]) -> f64 {
        debug_assert_eq!(args.len(), self.order);
        (self.kernel)(args)
    }

    /// `c * F`.
    pub fn scaled(&self, c: f64) -> Self {
        let k = self.kernel.clone();
        Self { name: format!("{c}*{}", self.name), order: self.order, kernel: Arc::new(move |a| c * k(a)) }
    }
}

/// `S(h)(x_1..x_k) = (1/k!) sum over permutations of h`.
pub fn symmetrize(order: usize, h: KernelFn) -> KernelFn {
    let perms = permutations(order);
    let scale = 1.0 / perms.len() as f64;
    Arc::new(move |args: &[Particle]| {
        let mut buf = args.to_vec();
        let mut total = 0.0;
        for p in &perms {
            for (slot, &i) in buf.iter_mut().zip(p) {
                *slot = args[i];
            }
            total += h(&buf);
        }
        total * scale
    })
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; k];
    fn rec(k: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                current.push(i);
                rec(k, current, used, out);
                current.pop();
                used[i] = false;
            }
        }
    }
    rec(k, &mut current, &mut used, &mut out);
    out
}

/// Calls `f` with every increasing `k`-subset of `0..n`.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Calls `f` with every ordered `k`-tuple of distinct indices in `0..n`.
pub fn for_each_ordered_tuple(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; n];
    fn rec(n: usize, k: usize, current: &mut Vec<usize>, used: &mut [bool], f: &mut dyn FnMut(&[usize])) {
        if current.len() == k {
            f(current);
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                current.push(i);
                rec(n, k, current, used, f);
                current.pop();
                used[i] = false;
            }
        }
    }
    rec(n, k, &mut current, &mut used, &mut f);
}

pub fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// `n! / (n - k)!`, zero when `k > n`.
pub fn falling_factorial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    ((n - k + 1) as u128..=n as u128).product()
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Sum of `f` over ordered `k`-tuples of distinct particles of `x`, computed
/// as `k!` times the sum over subsets. Zero when `x` has fewer than `k` particles.
pub fn eval_ustat(f: &UStatistic, x: &[Particle]) -> f64 {
    let k = f.order;
    let mut buf = Vec::with_capacity(k);
    let mut total = 0.0;
    for_each_combination(x.len(), k, |idx| {
        buf.clear();
        buf.extend(idx.iter().map(|&i| x[i]));
        total += f.kernel(&buf);
    });
    total * factorial(k) as f64
}

/// `D^n F(x) = sum_{J ⊆ [n]} (-1)^{n-|J|} F(x ∪ points_J)` for any functional.
pub fn difference_functional(f: &dyn Fn(&[Particle]) -> f64, x: &[Particle], points: &[Particle]) -> f64 {
    let n = points.len();
    let mut union: Vec<Particle> = Vec::with_capacity(x.len() + n);
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        union.clear();
        union.extend_from_slice(x);
        union.extend((0..n).filter(|i| mask >> i & 1 == 1).map(|i| points[i]));
        let sign = if (n - mask.count_ones() as usize).is_multiple_of(2) { 1.0 } else { -1.0 };
        total += sign * f(&union);
    }
    total
}

/// `D^n F(x) = k!/(k-n)! * sum over ordered (k-n)-tuples t of x of f(points, t)`.
pub fn difference_ustat_closed(f: &UStatistic, x: &[Particle], points: &[Particle]) -> Result<f64> {
    let (n, k) = (points.len(), f.order);
    if n > k {
        return Err(Error::OrderExceeded { n, k });
    }
    // k!/(k-n)! times (k-n)! orderings of each subset
    let mut buf = Vec::with_capacity(k);
    let mut total = 0.0;
    for_each_combination(x.len(), k - n, |idx| {
        buf.clear();
        buf.extend_from_slice(points);
        buf.extend(idx.iter().map(|&i| x[i]));
        total += f.kernel(&buf);
    });
    Ok(total * factorial(k) as f64)
}

/// Monte Carlo estimate of `T_n F(points) = k!/(k-n)! ∫ f(points, y) λ^{k-n}(dy)`
/// from `n_int` i.i.d. tuples drawn from the normalized measure.
pub fn kernel_tn(f: &UStatistic, points: &[Particle], m: &IntensityMeasure, n_int: usize, seed: u64) -> MomentEstimate {
    let (n, k) = (points.len(), f.order);
    if n > k {
        return MomentEstimate::exact(0.0, Method::Chaos);
    }
    let coef = falling_factorial(k, n) as f64;
    if n == k {
        return MomentEstimate::exact(coef * f.kernel(points), Method::Chaos);
    }
    let mut rng = rng_from_seed(seed);
    let mut buf = points.to_vec();
    let values: Vec<f64> = (0..n_int.max(1))
        .map(|_| {
            buf.truncate(n);
            for _ in n..k {
                buf.push(m.sample_particle(&mut rng));
            }
            f.kernel(&buf)
        })
        .collect();
    let (mu, se) = mean_se(&values);
    let scale = coef * m.total_mass().powi((k - n) as i32);
    MomentEstimate::new(mu * scale, se * scale, values.len(), 0, Method::Chaos)
}

/// A set partition of `0..size`; blocks are sorted and listed by smallest element
/// unless reordered by [`Partition::canonical`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn size(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// For each element, the index of its block.
    pub fn block_of(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.size()];
        for (b, block) in self.blocks.iter().enumerate() {
            for &e in block {
                out[e] = b;
            }
        }
        out
    }

    /// Bitmask of the base blocks each block touches.
    pub fn signatures(&self, orders: &[usize]) -> Vec<u32> {
        let base = base_index(orders);
        self.blocks.iter().map(|b| b.iter().fold(0u32, |acc, &e| acc | 1 << base[e])).collect()
    }

    /// Same partition with blocks sorted by (signature, smallest element).
    /// Partitions in one orbit of within-factor relabelings then give identical
    /// merged-kernel values at identical arguments for symmetric kernels.
    pub fn canonical(&self, orders: &[usize]) -> Partition {
        let sig = self.signatures(orders);
        let mut order: Vec<usize> = (0..self.blocks.len()).collect();
        order.sort_by_key(|&b| (sig[b], self.blocks[b][0]));
        Partition { blocks: order.into_iter().map(|b| self.blocks[b].clone()).collect() }
    }

    /// Checks that every block meets each base block at most once.
    pub fn check_admissible(&self, orders: &[usize]) -> Result<()> {
        let total: usize = orders.iter().sum();
        if self.size() != total {
            return Err(Error::NotInFamily(format!("partition covers {} indices, orders sum to {total}", self.size())));
        }
        let base = base_index(orders);
        let mut seen = vec![false; total];
        for block in &self.blocks {
            let mut mask = 0u32;
            for &e in block {
                if e >= total || seen[e] {
                    return Err(Error::NotInFamily(format!("index {e} missing or repeated")));
                }
                seen[e] = true;
                if mask >> base[e] & 1 == 1 {
                    return Err(Error::NotInFamily(format!("block {:?} meets factor {} twice", block, base[e] + 1)));
                }
                mask |= 1 << base[e];
            }
        }
        Ok(())
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let blocks: Vec<String> = self.blocks.iter().map(|b| format!("{{{}}}", b.iter().map(|e| (e + 1).to_string()).collect::<Vec<_>>().join(","))).collect();
        write!(f, "{{{}}}", blocks.join(","))
    }
}

fn base_index(orders: &[usize]) -> Vec<usize> {
    orders.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i, k)).collect()
}

/// All partitions of `0..sum(orders)` whose blocks meet each factor's index
/// block at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionFamily {
    pub orders: Vec<usize>,
    pub members: Vec<Partition>,
}

impl PartitionFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Number of members with each block count.
    pub fn count_by_blocks(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for p in &self.members {
            *out.entry(p.len()).or_insert(0) += 1;
        }
        out
    }
}

fn check_orders(orders: &[usize]) -> Result<()> {
    if orders.is_empty() || orders.contains(&0) || orders.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidOrders(orders.to_vec()));
    }
    let total: usize = orders.iter().sum();
    if total > MAX_TOTAL_ORDER {
        return Err(Error::TooManyIndices(total));
    }
    Ok(())
}

/// Enumerates the family by restricted-growth strings, pruning any block that
/// would receive two indices of the same factor.
pub fn enumerate_partition_family(orders: &[usize]) -> Result<PartitionFamily> {
    check_orders(orders)?;
    let base = base_index(orders);
    let total = base.len();
    let mut members = Vec::new();
    let mut assign = vec![0usize; total];
    let mut masks: Vec<u32> = Vec::with_capacity(total);

    fn rec(i: usize, base: &[usize], assign: &mut [usize], masks: &mut Vec<u32>, members: &mut Vec<Partition>) {
        if i == base.len() {
            let mut blocks = vec![Vec::new(); masks.len()];
            for (e, &b) in assign.iter().enumerate() {
                blocks[b].push(e);
            }
            members.push(Partition { blocks });
            return;
        }
        let bit = 1u32 << base[i];
        for b in 0..masks.len() {
            if masks[b] & bit == 0 {
                masks[b] |= bit;
                assign[i] = b;
                rec(i + 1, base, assign, masks, members);
                masks[b] &= !bit;
            }
        }
        masks.push(bit);
        assign[i] = masks.len() - 1;
        rec(i + 1, base, assign, masks, members);
        masks.pop();
    }

    rec(0, &base, &mut assign, &mut masks, &mut members);
    Ok(PartitionFamily { orders: orders.to_vec(), members })
}

/// Number of family members in which factor `l ≥ 2` contributes `j_l` indices
/// to new blocks and merges its other `k_l - j_l` indices into distinct
/// earlier blocks:
/// `prod_l C(k_l, j_l) * (k_1 + j_2 + .. + j_{l-1})! / (k_1 + j_2 + .. + j_l - k_l)!`.
/// Zero for infeasible `j`.
pub fn coefficient_a(orders: &[usize], j: &[usize]) -> Result<u128> {
    check_orders(orders)?;
    if j.len() + 1 != orders.len() {
        return Err(Error::InvalidJ { orders: orders.to_vec(), j: j.to_vec() });
    }
    let mut blocks = orders[0];
    let mut a: u128 = 1;
    for (&k, &jl) in orders[1..].iter().zip(j) {
        if jl > k {
            return Ok(0);
        }
        a *= binomial(k, jl) * falling_factorial(blocks, k - jl);
        if a == 0 {
            return Ok(0);
        }
        blocks += jl;
    }
    Ok(a)
}

/// All `j`-vectors `(j_2..j_m)` with `0 ≤ j_l ≤ k_l`.
pub fn j_vectors(orders: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &k in orders.iter().skip(1) {
        out = out.into_iter().flat_map(|v| (0..=k).map(move |jl| [v.clone(), vec![jl]].concat())).collect();
    }
    out
}

/// One row of the coefficient table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ARow {
    pub j: Vec<usize>,
    pub a: u128,
    pub blocks: usize,
}

pub fn coefficient_table(orders: &[usize]) -> Result<Vec<ARow>> {
    check_orders(orders)?;
    j_vectors(orders)
        .into_iter()
        .map(|j| {
            let a = coefficient_a(orders, &j)?;
            let blocks = orders[0] + j.iter().sum::<usize>();
            Ok(ARow { j, a, blocks })
        })
        .collect()
}

/// Orbit of family members under relabeling inside each factor, identified by
/// the sorted multiset of block signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct MergePattern {
    pub signatures: Vec<u32>,
    pub members: Vec<usize>,
}

impl MergePattern {
    pub fn block_count(&self) -> usize {
        self.signatures.len()
    }
}

/// Groups a family into merge patterns, in order of first appearance.
pub fn merge_patterns(family: &PartitionFamily) -> Vec<MergePattern> {
    let mut out: Vec<MergePattern> = Vec::new();
    for (i, p) in family.members.iter().enumerate() {
        let mut sig = p.signatures(&family.orders);
        sig.sort_unstable();
        match out.iter_mut().find(|m| m.signatures == sig) {
            Some(m) => m.members.push(i),
            None => out.push(MergePattern { signatures: sig, members: vec![i] }),
        }
    }
    out
}

/// Number of distinct merge patterns for orders given in any order.
pub fn merge_pattern_count(orders: &[usize]) -> Result<usize> {
    let mut sorted = orders.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    Ok(merge_patterns(&enumerate_partition_family(&sorted)?).len())
}

/// `(f_1 ⊗ .. ⊗ f_m)_σ` at `args`, where `args[b]` is the particle of block `b`.
pub fn merged_tensor_eval(kernels: &[&UStatistic], sigma: &Partition, args: &[Particle]) -> Result<f64> {
    let orders: Vec<usize> = kernels.iter().map(|f| f.order).collect();
    sigma.check_admissible(&orders)?;
    if args.len() != sigma.len() {
        return Err(Error::NotInFamily(format!("{} arguments for {} blocks", args.len(), sigma.len())));
    }
    Ok(MergedKernel::new(kernels, sigma).eval(args))
}

/// Precomputed variable substitution for a merged tensor kernel.
pub struct MergedKernel<'a> {
    kernels: Vec<&'a UStatistic>,
    slots: Vec<Vec<usize>>,
}

impl<'a> MergedKernel<'a> {
    /// `sigma` must be admissible for the kernels' orders.
    pub fn new(kernels: &[&'a UStatistic], sigma: &Partition) -> Self {
        let block_of = sigma.block_of();
        let mut offset = 0;
        let slots = kernels
            .iter()
            .map(|f| {
                let s = block_of[offset..offset + f.order].to_vec();
                offset += f.order;
                s
            })
            .collect();
        Self { kernels: kernels.to_vec(), slots }
    }

    pub fn eval(&self, args: &[Particle]) -> f64 {
        let mut buf: Vec<Particle> = Vec::with_capacity(MAX_TOTAL_ORDER);
        let mut product = 1.0;
        for (f, slots) in self.kernels.iter().zip(&self.slots) {
            buf.clear();
            buf.extend(slots.iter().map(|&b| args[b]));
            product *= f.kernel(&buf);
            if product == 0.0 {
                return 0.0;
            }
        }
        product
    }
}

/// Right-hand side of the product expansion
/// `prod_i F_i(x) = sum_σ sum over ordered |σ|-tuples of (⊗f_i)_σ`.
pub fn product_expand_eval(ustats: &[&UStatistic], x: &[Particle]) -> Result<f64> {
    let mut sorted = ustats.to_vec();
    sorted.sort_by(|a, b| b.order.cmp(&a.order));
    let orders: Vec<usize> = sorted.iter().map(|f| f.order).collect();
    let family = enumerate_partition_family(&orders)?;
    let mut total = 0.0;
    let mut args = Vec::with_capacity(MAX_TOTAL_ORDER);
    for sigma in &family.members {
        let merged = MergedKernel::new(&sorted, sigma);
        for_each_ordered_tuple(x.len(), sigma.len(), |idx| {
            args.clear();
            args.extend(idx.iter().map(|&i| x[i]));
            total += merged.eval(&args);
        });
    }
    Ok(total)
}

/// Built-in kernels.
pub mod kernels {
    use super::*;

    /// `F = L`, total segment length.
    pub fn segment_length() -> UStatistic {
        UStatistic::new("L", 1, true, |a: &[Particle]| a[0].as_segment().length).unwrap()
    }

    /// `F = N`, number of crossing pairs: `f = ½ 1[s ∩ t ≠ ∅]`.
    pub fn segment_crossings() -> UStatistic {
        UStatistic::new("N", 2, true, |a: &[Particle]| if segments_intersect(a[0].as_segment(), a[1].as_segment()) { 0.5 } else { 0.0 }).unwrap()
    }

    /// `F = S`, total plate area.
    pub fn plate_area_kernel() -> UStatistic {
        UStatistic::new("S", 1, true, |a: &[Particle]| plate_area(a[0].as_plate())).unwrap()
    }

    /// `F = L`, total chord length over pairs: `f = ½ chord`.
    pub fn plate_chords() -> UStatistic {
        UStatistic::new("L", 2, true, |a: &[Particle]| 0.5 * plate_pair_chord_length(a[0].as_plate(), a[1].as_plate())).unwrap()
    }

    /// `F = N`, number of triples with a common point: `f = (1/6) 1[..]`.
    pub fn plate_triples() -> UStatistic {
        UStatistic::new("N", 3, true, |a: &[Particle]| if plates_triple_intersect(a[0].as_plate(), a[1].as_plate(), a[2].as_plate()) { 1.0 / 6.0 } else { 0.0 }).unwrap()
    }

    /// `F = n(x)`.
    pub fn count() -> UStatistic {
        UStatistic::new("n", 1, true, |_: &[Particle]| 1.0).unwrap()
    }

    /// `F = μ(C)` for an axis-aligned box `C` in germ coordinates.
    pub fn box_count(lo: Vec<f64>, hi: Vec<f64>) -> UStatistic {
        UStatistic::new("C", 1, true, move |a: &[Particle]| {
            let g = a[0].germ();
            let inside = lo.iter().zip(&hi).enumerate().all(|(i, (l, h))| g[i] >= *l && g[i] <= *h);
            if inside { 1.0 } else { 0.0 }
        })
        .unwrap()
    }

    /// Number of unordered `r`-close point pairs: `f = ½ 1[|u - v| ≤ r]`.
    pub fn close_pairs(r: f64) -> UStatistic {
        UStatistic::new("s", 2, true, move |a: &[Particle]| {
            let (u, v) = (a[0].as_point(), a[1].as_point());
            let d2 = (u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2);
            if d2 <= r * r { 0.5 } else { 0.0 }
        })
        .unwrap()
    }
}

/// U-statistic view of each component of a model's statistic vector.
pub fn model_ustats(model: &crate::process::GibbsModel) -> Vec<UStatistic> {
    use crate::process::ModelKind;
    match model.kind {
        ModelKind::Segment => vec![kernels::segment_length(), kernels::segment_crossings()],
        ModelKind::Plate => vec![kernels::plate_area_kernel(), kernels::plate_chords(), kernels::plate_triples()],
        ModelKind::Strauss { r } => vec![kernels::count(), kernels::close_pairs(r)],
    }
}

/// Looks up a model statistic by component name.
pub fn model_ustat(model: &crate::process::GibbsModel, name: &str) -> Option<UStatistic> {
    model_ustats(model).into_iter().find(|u| u.name == name)
}

impl Configuration {
    pub fn ustat(&self, f: &UStatistic) -> f64 {
        eval_ustat(f, self)
    }
}
