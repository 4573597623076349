//! Sparse QUBO problems.
//!
//! A [`Qubo`] is the quadratic form
//!
//! ```text
//! E(z) = offset + sum_i linear[i] z_i + sum_{i<j} quadratic[(i,j)] z_i z_j
//! ```
//!
//! over binary variables. Energies are always summed in the same order
//! (offset, then linear terms by ascending index, then quadratic terms by
//! ascending `(i, j)`), so a given assignment evaluates to the same bits on
//! every run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest problem [`brute_force_solve`] will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 24;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qubo {
    n_vars: usize,
    linear: BTreeMap<usize, f64>,
    quadratic: BTreeMap<(usize, usize), f64>,
    offset: f64,
}

impl Qubo {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            ..Self::default()
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn linear(&self) -> &BTreeMap<usize, f64> {
        &self.linear
    }

    pub fn quadratic(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.quadratic
    }

    pub fn linear_coeff(&self, i: usize) -> f64 {
        self.linear.get(&i).copied().unwrap_or(0.0)
    }

    pub fn quadratic_coeff(&self, i: usize, j: usize) -> f64 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.quadratic.get(&key).copied().unwrap_or(0.0)
    }

    pub fn add_offset(&mut self, c: f64) {
        self.offset += c;
    }

    /// Accumulates `c` onto the linear coefficient of `i`.
    pub fn add_linear(&mut self, i: usize, c: f64) -> Result<()> {
        if i >= self.n_vars {
            return Err(Error::arg(format!(
                "linear index {i} out of range for {} variables",
                self.n_vars
            )));
        }
        *self.linear.entry(i).or_insert(0.0) += c;
        Ok(())
    }

    /// Accumulates `c` onto the coupling between `i` and `j`, stored under
    /// `(min, max)`. Diagonal terms are rejected: since `z*z = z` the caller
    /// must fold them into [`Qubo::add_linear`] explicitly.
    pub fn add_quadratic(&mut self, i: usize, j: usize, c: f64) -> Result<()> {
        if i == j {
            return Err(Error::arg(format!(
                "diagonal quadratic term ({i},{i}); fold it into the linear term"
            )));
        }
        let key = (i.min(j), i.max(j));
        if key.1 >= self.n_vars {
            return Err(Error::arg(format!(
                "quadratic index {} out of range for {} variables",
                key.1, self.n_vars
            )));
        }
        *self.quadratic.entry(key).or_insert(0.0) += c;
        Ok(())
    }

    pub fn energy(&self, bits: &[u8]) -> Result<f64> {
        if bits.len() != self.n_vars {
            return Err(Error::arg(format!(
                "assignment has {} bits, problem has {} variables",
                bits.len(),
                self.n_vars
            )));
        }
        Ok(self.energy_unchecked(bits))
    }

    pub(crate) fn energy_unchecked(&self, bits: &[u8]) -> f64 {
        let mut e = self.offset;
        for (&i, &c) in &self.linear {
            if bits[i] != 0 {
                e += c;
            }
        }
        for (&(i, j), &c) in &self.quadratic {
            if bits[i] != 0 && bits[j] != 0 {
                e += c;
            }
        }
        e
    }

    /// Symmetric adjacency view used by local-search style solvers.
    pub fn adjacency(&self) -> Adjacency {
        Adjacency::new(self)
    }

    /// Writes the line-oriented text format:
    /// `p qubo <n_vars> <n_linear> <n_quadratic> <offset>` followed by
    /// `l <i> <c>` and `q <i> <j> <c>` lines. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "p qubo {} {} {} {:?}",
            self.n_vars,
            self.linear.len(),
            self.quadratic.len(),
            self.offset
        );
        for (i, c) in &self.linear {
            let _ = writeln!(out, "l {i} {c:?}");
        }
        for ((i, j), c) in &self.quadratic {
            let _ = writeln!(out, "q {i} {j} {c:?}");
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parses the format written by [`Qubo::write_to`]. Blank lines and lines
    /// starting with `c` or `#` are ignored. Error offsets are byte offsets of
    /// the offending line.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut qubo: Option<Qubo> = None;
        let mut expected = (0usize, 0usize);
        let mut offset = 0usize;
        for line in r.lines() {
            let line = line?;
            let start = offset;
            offset += line.len() + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('c') || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            match (fields[0], qubo.as_mut()) {
                ("p", None) => {
                    if fields.len() != 6 || fields[1] != "qubo" {
                        return Err(Error::parse(start, "malformed problem line"));
                    }
                    let n = parse_field::<usize>(fields[2], start)?;
                    expected = (
                        parse_field::<usize>(fields[3], start)?,
                        parse_field::<usize>(fields[4], start)?,
                    );
                    let mut q = Qubo::new(n);
                    q.offset = parse_field::<f64>(fields[5], start)?;
                    qubo = Some(q);
                }
                ("p", Some(_)) => return Err(Error::parse(start, "duplicate problem line")),
                (_, None) => return Err(Error::parse(start, "term before problem line")),
                ("l", Some(q)) => {
                    if fields.len() != 3 {
                        return Err(Error::parse(start, "linear line needs 2 fields"));
                    }
                    let i = parse_field::<usize>(fields[1], start)?;
                    let c = parse_field::<f64>(fields[2], start)?;
                    q.add_linear(i, c).map_err(|e| Error::parse(start, e.to_string()))?;
                }
                ("q", Some(q)) => {
                    if fields.len() != 4 {
                        return Err(Error::parse(start, "quadratic line needs 3 fields"));
                    }
                    let i = parse_field::<usize>(fields[1], start)?;
                    let j = parse_field::<usize>(fields[2], start)?;
                    let c = parse_field::<f64>(fields[3], start)?;
                    q.add_quadratic(i, j, c)
                        .map_err(|e| Error::parse(start, e.to_string()))?;
                }
                (tag, Some(_)) => {
                    return Err(Error::parse(start, format!("unknown line tag {tag:?}")))
                }
            }
        }
        let q = qubo.ok_or_else(|| Error::parse(offset, "missing problem line"))?;
        if q.linear.len() != expected.0 || q.quadratic.len() != expected.1 {
            return Err(Error::parse(
                offset,
                format!(
                    "header announced {} linear / {} quadratic terms, found {} / {}",
                    expected.0,
                    expected.1,
                    q.linear.len(),
                    q.quadratic.len()
                ),
            ));
        }
        Ok(q)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, offset: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(offset, format!("cannot parse {s:?}")))
}

/// Compressed symmetric neighbour lists of a [`Qubo`].
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub linear: Vec<f64>,
    pub starts: Vec<usize>,
    pub neighbors: Vec<u32>,
    pub weights: Vec<f64>,
}

impl Adjacency {
    fn new(q: &Qubo) -> Self {
        let n = q.n_vars;
        let mut linear = vec![0.0; n];
        for (&i, &c) in &q.linear {
            linear[i] = c;
        }
        let mut degree = vec![0usize; n];
        for &(i, j) in q.quadratic.keys() {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut starts = Vec::with_capacity(n + 1);
        starts.push(0);
        for d in &degree {
            starts.push(starts.last().unwrap() + d);
        }
        let nnz = *starts.last().unwrap();
        let mut neighbors = vec![0u32; nnz];
        let mut weights = vec![0.0; nnz];
        let mut fill = starts[..n].to_vec();
        for (&(i, j), &c) in &q.quadratic {
            neighbors[fill[i]] = j as u32;
            weights[fill[i]] = c;
            fill[i] += 1;
            neighbors[fill[j]] = i as u32;
            weights[fill[j]] = c;
            fill[j] += 1;
        }
        Self {
            linear,
            starts,
            neighbors,
            weights,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.starts[i]..self.starts[i + 1];
        self.neighbors[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .map(|(&j, &w)| (j as usize, w))
    }

    /// Energy change of flipping bit `i` in `bits`.
    pub fn flip_delta(&self, bits: &[u8], i: usize) -> f64 {
        let field = self.linear[i]
            + self
                .row(i)
                .filter(|&(j, _)| bits[j] != 0)
                .map(|(_, w)| w)
                .sum::<f64>();
        if bits[i] == 0 {
            field
        } else {
            -field
        }
    }
}

/// One solver read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub bits: Vec<u8>,
    pub energy: f64,
}

/// Read-outs of one solve call together with the seed that produced them.
#[derive(Debug, Clone)]
pub struct SampleSet {
    samples: Vec<Sample>,
    rng_seed: u64,
}

impl SampleSet {
    pub fn new(samples: Vec<Sample>, rng_seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::arg("a sample set cannot be empty"));
        }
        Ok(Self { samples, rng_seed })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Lowest-energy sample; ties go to the lowest sample index.
    pub fn best(&self) -> &Sample {
        let mut best = &self.samples[0];
        for s in &self.samples[1..] {
            if s.energy < best.energy {
                best = s;
            }
        }
        best
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

/// Returns every global minimiser of `q` by exhaustive enumeration.
///
/// Energies are evaluated with the same summation order as [`Qubo::energy`].
/// Assignments within `1e-9 * max(1, |min|)` of the minimum are treated as ties
/// so that mathematically equal energies that differ only by rounding are all
/// reported. Samples come out in ascending order of their binary encoding
/// (bit `i` of the code is variable `i`).
pub fn brute_force_solve(q: &Qubo) -> Result<SampleSet> {
    let n = q.n_vars;
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Capacity {
            n_vars: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let linear: Vec<(usize, f64)> = q.linear.iter().map(|(&i, &c)| (i, c)).collect();
    let quadratic: Vec<(usize, usize, f64)> =
        q.quadratic.iter().map(|(&(i, j), &c)| (i, j, c)).collect();
    let eval = |code: u32| -> f64 {
        let mut e = q.offset;
        for &(i, c) in &linear {
            if code >> i & 1 == 1 {
                e += c;
            }
        }
        for &(i, j, c) in &quadratic {
            if code >> i & 1 == 1 && code >> j & 1 == 1 {
                e += c;
            }
        }
        e
    };
    let total: u64 = 1u64 << n;
    const CHUNK: u64 = 1 << 14;
    let n_chunks = total.div_ceil(CHUNK);
    let tol = |m: f64| 1e-9 * m.abs().max(1.0);

    let per_chunk: Vec<(f64, Vec<(u32, f64)>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(total);
            let mut min = f64::INFINITY;
            let mut keep: Vec<(u32, f64)> = Vec::new();
            for code in lo..hi {
                let code = code as u32;
                let e = eval(code);
                if e < min {
                    min = e;
                    keep.retain(|&(_, k)| k <= min + tol(min));
                }
                if e <= min + tol(min) {
                    keep.push((code, e));
                }
            }
            (min, keep)
        })
        .collect();

    let min = per_chunk
        .iter()
        .map(|(m, _)| *m)
        .fold(f64::INFINITY, f64::min);
    let samples = per_chunk
        .into_iter()
        .flat_map(|(_, keep)| keep)
        .filter(|&(_, e)| e <= min + tol(min))
        .map(|(code, energy)| Sample {
            bits: (0..n).map(|i| (code >> i & 1) as u8).collect(),
            energy,
        })
        .collect();
    SampleSet::new(samples, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use proptest::prelude::*;

    fn qubo(n: usize, linear: &[(usize, f64)], quad: &[(usize, usize, f64)]) -> Qubo {
        let mut q = Qubo::new(n);
        for &(i, c) in linear {
            q.add_linear(i, c).unwrap();
        }
        for &(i, j, c) in quad {
            q.add_quadratic(i, j, c).unwrap();
        }
        q
    }

    #[test]
    fn energy_examples() {
        let q = qubo(1, &[(0, -1.0)], &[]);
        assert_eq!(q.energy(&[1]).unwrap(), -1.0);

        let cut = qubo(2, &[(0, 1.0), (1, 1.0)], &[(0, 1, -2.0)]);
        assert_eq!(cut.energy(&[1, 1]).unwrap(), 0.0);
        assert_eq!(cut.energy(&[1, 0]).unwrap(), 1.0);
        assert_eq!(cut.energy(&[0, 0]).unwrap(), 0.0);
        assert_eq!(cut.energy(&[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn energy_length_mismatch() {
        let q = Qubo::new(3);
        assert!(matches!(q.energy(&[0, 1]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn quadratic_key_normalised_and_accumulated() {
        let mut q = Qubo::new(4);
        q.add_quadratic(3, 1, 0.5).unwrap();
        assert_eq!(q.quadratic().get(&(1, 3)), Some(&0.5));
        q.add_quadratic(1, 3, 0.25).unwrap();
        assert_eq!(q.quadratic().get(&(1, 3)), Some(&0.75));

        q.add_linear(0, 1.0).unwrap();
        q.add_linear(0, 2.0).unwrap();
        assert_eq!(q.linear()[&0], 3.0);
    }

    #[test]
    fn diagonal_and_range_rejected() {
        let mut q = Qubo::new(3);
        assert!(q.add_quadratic(2, 2, 1.0).is_err());
        assert!(q.add_quadratic(0, 3, 1.0).is_err());
        assert!(q.add_linear(3, 1.0).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let q = qubo(2, &[(0, -1.0), (1, -1.0)], &[(0, 1, 3.0)]);
        let set = brute_force_solve(&q).unwrap();
        let mut minima: Vec<Vec<u8>> = set.samples().iter().map(|s| s.bits.clone()).collect();
        minima.sort();
        assert_eq!(minima, vec![vec![0, 1], vec![1, 0]]);
        assert!(set.samples().iter().all(|s| s.energy == -1.0));

        let zero = Qubo::new(2);
        let set = brute_force_solve(&zero).unwrap();
        assert_eq!(set.len(), 4);
        assert!(set.samples().iter().all(|s| s.energy == 0.0));

        let single = qubo(1, &[(0, 5.0)], &[]);
        let set = brute_force_solve(&single).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.best().bits, vec![0]);
        assert_eq!(set.best().energy, 0.0);
    }

    #[test]
    fn brute_force_capacity() {
        let q = Qubo::new(25);
        assert!(matches!(
            brute_force_solve(&q),
            Err(Error::Capacity { n_vars: 25, .. })
        ));
    }

    #[test]
    fn best_breaks_ties_by_index() {
        let set = SampleSet::new(
            vec![
                Sample { bits: vec![0], energy: 1.0 },
                Sample { bits: vec![1], energy: -2.0 },
                Sample { bits: vec![0], energy: -2.0 },
            ],
            0,
        )
        .unwrap();
        assert_eq!(set.best().bits, vec![1]);
        assert!(SampleSet::new(vec![], 0).is_err());
    }

    #[test]
    fn text_format_rejects_garbage() {
        let bad = "p qubo 2 1 0 0.0\nl 0 abc\n";
        match Qubo::read_from(bad.as_bytes()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 17),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Qubo::read_from("l 0 1\n".as_bytes()).is_err());
        assert!(Qubo::read_from("p qubo 2 2 0 0\nl 0 1\n".as_bytes()).is_err());
        assert!(Qubo::read_from("p qubo 2 0 1 0\nq 1 1 1\n".as_bytes()).is_err());
    }

    fn random_qubo(rng: &mut Prng, n: usize) -> Qubo {
        let mut q = Qubo::new(n);
        q.add_offset(rng.uniform() * 10.0 - 5.0);
        for i in 0..n {
            if rng.uniform() < 0.7 {
                q.add_linear(i, rng.standard_normal() * 3.0).unwrap();
            }
            for j in (i + 1)..n {
                if rng.uniform() < 0.4 {
                    q.add_quadratic(i, j, rng.standard_normal() * 1e3).unwrap();
                }
            }
        }
        q
    }

    proptest! {
        #[test]
        fn local_field_identity(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = Prng::new(seed);
            let q = random_qubo(&mut rng, n);
            let adj = q.adjacency();
            let bits: Vec<u8> = (0..n).map(|_| rng.bit()).collect();
            let e0 = q.energy(&bits).unwrap();
            for i in 0..n {
                let mut flipped = bits.clone();
                flipped[i] ^= 1;
                let e1 = q.energy(&flipped).unwrap();
                let d = adj.flip_delta(&bits, i);
                prop_assert!((e1 - e0 - d).abs() <= 1e-9 * (1.0 + e0.abs().max(e1.abs())));
            }
        }

        #[test]
        fn text_round_trip_preserves_energies(seed in any::<u64>(), n in 1usize..10) {
            let mut rng = Prng::new(seed);
            let q = random_qubo(&mut rng, n);
            let back = Qubo::read_from(q.to_text().as_bytes()).unwrap();
            prop_assert_eq!(&back, &q);
            for _ in 0..20 {
                let bits: Vec<u8> = (0..n).map(|_| rng.bit()).collect();
                prop_assert_eq!(q.energy(&bits).unwrap().to_bits(), back.energy(&bits).unwrap().to_bits());
            }
        }

        #[test]
        fn brute_force_is_a_lower_bound(seed in any::<u64>(), n in 1usize..10) {
            let mut rng = Prng::new(seed);
            let q = random_qubo(&mut rng, n);
            let set = brute_force_solve(&q).unwrap();
            let min = set.best().energy;
            for s in set.samples() {
                prop_assert!((s.energy - min).abs() <= 1e-9 * min.abs().max(1.0));
                prop_assert_eq!(q.energy(&s.bits).unwrap(), s.energy);
            }
            for code in 0u32..(1 << n) {
                let bits: Vec<u8> = (0..n).map(|i| (code >> i & 1) as u8).collect();
                prop_assert!(q.energy(&bits).unwrap() >= min - 1e-9 * min.abs().max(1.0));
            }
        }
    }
}
