use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Variable identifier: the position of the variable in the model's declaration order.
pub type VarId = usize;

/// A full or partial assignment of values to variables.
pub type Assignment = BTreeMap<VarId, usize>;

/// A tabular function over an ordered scope.
///
/// Tables are row-major with the last scope variable varying fastest, so for a
/// ternary `f(X1, X2)` the entry `<1, 0>` sits at index 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    scope: Vec<VarId>,
    cards: Vec<usize>,
    table: Vec<f64>,
}

impl Factor {
    pub fn new(scope: Vec<VarId>, cards: Vec<usize>, table: Vec<f64>) -> Result<Self> {
        if scope.len() != cards.len() {
            return Err(Error::Structure(format!(
                "scope has {} variables but {} cardinalities",
                scope.len(),
                cards.len()
            )));
        }
        for (i, v) in scope.iter().enumerate() {
            if scope[..i].contains(v) {
                return Err(Error::Structure(format!("variable {v} repeated in scope")));
            }
        }
        if let Some(pos) = cards.iter().position(|&k| k == 0) {
            return Err(Error::Structure(format!(
                "variable {} has cardinality 0",
                scope[pos]
            )));
        }
        let size = table_size(&cards)?;
        if size != table.len() {
            return Err(Error::Structure(format!(
                "factor over {:?} expects {} entries, got {}",
                scope,
                size,
                table.len()
            )));
        }
        if let Some(bad) = table.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::Structure(format!(
                "factor over {scope:?} has invalid entry {bad}"
            )));
        }
        Ok(Factor {
            scope,
            cards,
            table,
        })
    }

    /// Empty-scope factor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Factor {
            scope: Vec::new(),
            cards: Vec::new(),
            table: vec![value],
        }
    }

    pub fn scope(&self) -> &[VarId] {
        &self.scope
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn contains(&self, v: VarId) -> bool {
        self.scope.contains(&v)
    }

    pub fn card_of(&self, v: VarId) -> Option<usize> {
        self.scope
            .iter()
            .position(|&x| x == v)
            .map(|p| self.cards[p])
    }

    /// Entry for `a`, which must assign every scope variable (extra variables are ignored).
    pub fn value(&self, a: &Assignment) -> Result<f64> {
        let mut idx = 0;
        for (&v, &k) in self.scope.iter().zip(&self.cards) {
            let x = *a
                .get(&v)
                .ok_or_else(|| Error::Contract(format!("assignment lacks variable {v}")))?;
            if x >= k {
                return Err(Error::Domain(format!(
                    "value {x} out of range for variable {v}"
                )));
            }
            idx = idx * k + x;
        }
        Ok(self.table[idx])
    }

    /// Same function with its scope permuted to `new_scope`.
    pub fn reordered(&self, new_scope: &[VarId]) -> Result<Factor> {
        if new_scope.len() != self.scope.len() || !new_scope.iter().all(|v| self.contains(*v)) {
            return Err(Error::Contract(format!(
                "{new_scope:?} is not a permutation of {:?}",
                self.scope
            )));
        }
        if new_scope == self.scope.as_slice() {
            return Ok(self.clone());
        }
        let cards: Vec<usize> = new_scope
            .iter()
            .map(|&v| self.card_of(v).expect("checked above"))
            .collect();
        let strides = projected_strides(new_scope, &self.scope, &self.cards);
        let mut walk = Walker::new(cards.clone(), vec![strides]);
        let mut table = Vec::with_capacity(self.table.len());
        for _ in 0..self.table.len() {
            table.push(self.table[walk.offset(0)]);
            walk.advance();
        }
        Ok(Factor {
            scope: new_scope.to_vec(),
            cards,
            table,
        })
    }

    /// Slice at `var = value`, dropping `var` from the scope. Factors not mentioning
    /// `var` are returned unchanged.
    pub fn conditioned(&self, var: VarId, value: usize) -> Result<Factor> {
        let Some(pos) = self.scope.iter().position(|&v| v == var) else {
            return Ok(self.clone());
        };
        if value >= self.cards[pos] {
            return Err(Error::Domain(format!(
                "value {value} out of range for variable {var} (cardinality {})",
                self.cards[pos]
            )));
        }
        let full = strides(&self.cards);
        let mut scope = self.scope.clone();
        let mut cards = self.cards.clone();
        scope.remove(pos);
        cards.remove(pos);
        let mut rest = full.clone();
        rest.remove(pos);
        let size = table_size(&cards)?;
        let base = value * full[pos];
        let mut walk = Walker::new(cards.clone(), vec![rest]);
        let mut table = Vec::with_capacity(size);
        for _ in 0..size {
            table.push(self.table[base + walk.offset(0)]);
            walk.advance();
        }
        Ok(Factor {
            scope,
            cards,
            table,
        })
    }
}

/// Number of entries in a table over the given cardinalities.
pub fn table_size(cards: &[usize]) -> Result<usize> {
    cards
        .iter()
        .try_fold(1usize, |acc, &k| acc.checked_mul(k))
        .ok_or(Error::TableOverflow(cards.len()))
}

/// Row-major strides, last position fastest.
pub fn strides(cards: &[usize]) -> Vec<usize> {
    let mut out = vec![0; cards.len()];
    let mut acc = 1;
    for i in (0..cards.len()).rev() {
        out[i] = acc;
        acc *= cards[i];
    }
    out
}

/// Strides of a table over `inner_scope`, expressed per position of `outer_scope`
/// (zero where the outer variable is absent from the inner scope).
pub fn projected_strides(
    outer_scope: &[VarId],
    inner_scope: &[VarId],
    inner_cards: &[usize],
) -> Vec<usize> {
    let inner = strides(inner_cards);
    outer_scope
        .iter()
        .map(|v| {
            inner_scope
                .iter()
                .position(|x| x == v)
                .map_or(0, |p| inner[p])
        })
        .collect()
}

/// Mixed-radix odometer over an ordered scope that keeps flat offsets into any
/// number of tables whose scopes are subsets of it.
#[derive(Debug, Clone)]
pub(crate) struct Walker {
    cards: Vec<usize>,
    digits: Vec<usize>,
    strides: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

impl Walker {
    pub(crate) fn new(cards: Vec<usize>, strides: Vec<Vec<usize>>) -> Self {
        let n = cards.len();
        let t = strides.len();
        Walker {
            cards,
            digits: vec![0; n],
            strides,
            offsets: vec![0; t],
        }
    }

    /// Jump to the flat index `idx` of the walked scope.
    pub(crate) fn seek(&mut self, mut idx: usize) {
        for p in (0..self.cards.len()).rev() {
            self.digits[p] = idx % self.cards[p];
            idx /= self.cards[p];
        }
        for (off, st) in self.offsets.iter_mut().zip(&self.strides) {
            *off = self.digits.iter().zip(st).map(|(d, s)| d * s).sum();
        }
    }

    #[inline]
    pub(crate) fn offset(&self, t: usize) -> usize {
        self.offsets[t]
    }

    /// Step to the next assignment; wraps to all-zeros after the last one.
    #[inline]
    pub(crate) fn advance(&mut self) {
        for p in (0..self.cards.len()).rev() {
            self.digits[p] += 1;
            if self.digits[p] < self.cards[p] {
                for (off, st) in self.offsets.iter_mut().zip(&self.strides) {
                    *off += st[p];
                }
                return;
            }
            self.digits[p] = 0;
            let back = self.cards[p] - 1;
            for (off, st) in self.offsets.iter_mut().zip(&self.strides) {
                *off -= back * st[p];
            }
        }
    }
}

fn scope_cards(scope: &[VarId], cards: &[usize]) -> Result<Vec<usize>> {
    scope
        .iter()
        .map(|&v| {
            cards
                .get(v)
                .copied()
                .ok_or_else(|| Error::Contract(format!("variable {v} has no cardinality")))
        })
        .collect()
}

/// Flat table index of `a` in a table over `scope`. `cards` is indexed by variable id.
pub fn assignment_to_index(scope: &[VarId], cards: &[usize], a: &Assignment) -> Result<usize> {
    if a.len() != scope.len() {
        return Err(Error::Contract(format!(
            "assignment over {} variables for a scope of {}",
            a.len(),
            scope.len()
        )));
    }
    let ks = scope_cards(scope, cards)?;
    let mut idx = 0usize;
    for (&v, &k) in scope.iter().zip(&ks) {
        let x = *a
            .get(&v)
            .ok_or_else(|| Error::Contract(format!("assignment lacks scope variable {v}")))?;
        if x >= k {
            return Err(Error::Contract(format!(
                "value {x} out of range for variable {v}"
            )));
        }
        idx = idx
            .checked_mul(k)
            .and_then(|i| i.checked_add(x))
            .ok_or(Error::TableOverflow(scope.len()))?;
    }
    Ok(idx)
}

/// Inverse of [`assignment_to_index`].
pub fn index_to_assignment(scope: &[VarId], cards: &[usize], idx: usize) -> Result<Assignment> {
    let ks = scope_cards(scope, cards)?;
    let size = table_size(&ks)?;
    if idx >= size {
        return Err(Error::Contract(format!(
            "index {idx} outside table of {size} entries"
        )));
    }
    let mut rest = idx;
    let mut a = Assignment::new();
    for (&v, &k) in scope.iter().zip(&ks).rev() {
        a.insert(v, rest % k);
        rest /= k;
    }
    Ok(a)
}

/// Pointwise product of `fs` laid out over `out_scope`.
///
/// Each output entry is `1.0 * f_0 * f_1 * ...` in list order.
pub fn factor_product(fs: &[&Factor], out_scope: &[VarId], cards: &[usize]) -> Result<Factor> {
    let out_cards = scope_cards(out_scope, cards)?;
    for (i, v) in out_scope.iter().enumerate() {
        if out_scope[..i].contains(v) {
            return Err(Error::Contract(format!(
                "variable {v} repeated in output scope"
            )));
        }
    }
    for f in fs {
        for (&v, &k) in f.scope.iter().zip(&f.cards) {
            if !out_scope.contains(&v) {
                return Err(Error::Contract(format!(
                    "output scope {out_scope:?} does not cover variable {v}"
                )));
            }
            if cards[v] != k {
                return Err(Error::Contract(format!(
                    "variable {v} has cardinality {k} in a factor but {} in the model",
                    cards[v]
                )));
            }
        }
    }
    let size = table_size(&out_cards)?;
    let strides = fs
        .iter()
        .map(|f| projected_strides(out_scope, &f.scope, &f.cards))
        .collect();
    let mut walk = Walker::new(out_cards.clone(), strides);
    let mut table = Vec::with_capacity(size);
    for _ in 0..size {
        let mut p = 1.0;
        for (t, f) in fs.iter().enumerate() {
            p *= f.table[walk.offset(t)];
        }
        table.push(p);
        walk.advance();
    }
    Ok(Factor {
        scope: out_scope.to_vec(),
        cards: out_cards,
        table,
    })
}

/// Sums `v` out of `f`; the remaining variables keep their order.
pub fn factor_sum_out(f: &Factor, v: VarId) -> Result<Factor> {
    let pos = f
        .scope
        .iter()
        .position(|&x| x == v)
        .ok_or_else(|| Error::Contract(format!("variable {v} not in scope {:?}", f.scope)))?;
    let full = strides(&f.cards);
    let step = full[pos];
    let k = f.cards[pos];
    let mut scope = f.scope.clone();
    let mut cards = f.cards.clone();
    let mut rest = full;
    scope.remove(pos);
    cards.remove(pos);
    rest.remove(pos);
    let size = table_size(&cards)?;
    let mut walk = Walker::new(cards.clone(), vec![rest]);
    let mut table = Vec::with_capacity(size);
    for _ in 0..size {
        let base = walk.offset(0);
        let mut s = 0.0;
        for y in 0..k {
            s += f.table[base + y * step];
        }
        table.push(s);
        walk.advance();
    }
    Ok(Factor {
        scope,
        cards,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(pairs: &[(VarId, usize)]) -> Assignment {
        pairs.iter().copied().collect()
    }

    #[test]
    fn binary_pair_index() {
        // f(X1, X2) ternary, X1 = 1, X2 = 2
        let cards = [3, 3, 3];
        assert_eq!(
            assignment_to_index(&[1, 2], &cards, &a(&[(1, 0), (2, 1)])).unwrap(),
            1
        );
        assert_eq!(
            assignment_to_index(&[1, 2], &cards, &a(&[(1, 1), (2, 0)])).unwrap(),
            3
        );
        assert_eq!(
            index_to_assignment(&[1, 2], &cards, 3).unwrap(),
            a(&[(1, 1), (2, 0)])
        );
        assert_eq!(
            index_to_assignment(&[1, 2], &cards, 0).unwrap(),
            a(&[(1, 0), (2, 0)])
        );
    }

    #[test]
    fn index_contract_errors() {
        let cards = [2, 2, 2];
        assert!(matches!(
            assignment_to_index(&[0, 1], &cards, &a(&[(0, 0)])),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            assignment_to_index(&[0, 1], &cards, &a(&[(0, 0), (2, 0)])),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            assignment_to_index(&[0], &cards, &a(&[(0, 2)])),
            Err(Error::Contract(_))
        ));
        assert!(index_to_assignment(&[0, 1], &cards, 4).is_err());
    }

    #[test]
    fn factor_validation() {
        assert!(Factor::new(vec![0], vec![2], vec![0.3, 0.7]).is_ok());
        assert!(Factor::new(vec![0], vec![2], vec![0.3]).is_err());
        assert!(Factor::new(vec![0, 0], vec![2, 2], vec![0.0; 4]).is_err());
        assert!(Factor::new(vec![0], vec![0], vec![]).is_err());
        assert!(Factor::new(vec![0], vec![2], vec![-1.0, 1.0]).is_err());
        assert!(Factor::new(vec![0], vec![2], vec![f64::NAN, 1.0]).is_err());
        assert_eq!(Factor::new(vec![], vec![], vec![2.5]).unwrap().len(), 1);
    }

    #[test]
    fn product_identity_copy() {
        let f = Factor::new(vec![0, 1], vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let p = factor_product(&[&f], &[0, 1], &[2, 3]).unwrap();
        assert_eq!(p, f);
    }

    #[test]
    fn product_of_unaries() {
        let f = Factor::new(vec![0], vec![2], vec![0.5, 0.5]).unwrap();
        let g = Factor::new(vec![0], vec![2], vec![0.2, 0.8]).unwrap();
        let p = factor_product(&[&f, &g], &[0], &[2]).unwrap();
        assert_eq!(p.table(), &[0.1, 0.4]);
    }

    #[test]
    fn product_scope_must_cover() {
        let f = Factor::new(vec![0, 1], vec![2, 2], vec![1.0; 4]).unwrap();
        assert!(matches!(
            factor_product(&[&f], &[0], &[2, 2]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn product_into_wider_scope() {
        // f(B) * g(A) over (A, B, C)
        let f = Factor::new(vec![1], vec![2], vec![2.0, 3.0]).unwrap();
        let g = Factor::new(vec![0], vec![2], vec![5.0, 7.0]).unwrap();
        let p = factor_product(&[&f, &g], &[0, 1, 2], &[2, 2, 2]).unwrap();
        assert_eq!(p.table(), &[10.0, 10.0, 15.0, 15.0, 14.0, 14.0, 21.0, 21.0]);
    }

    #[test]
    fn sum_out_cases() {
        let f = Factor::new(vec![0], vec![2], vec![0.3, 0.7]).unwrap();
        let s = factor_sum_out(&f, 0).unwrap();
        assert!(s.scope().is_empty());
        assert!((s.table()[0] - 1.0).abs() < 1e-15);

        let g = Factor::new(vec![1, 2], vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(factor_sum_out(&g, 2).unwrap().table(), &[3.0, 7.0]);
        assert_eq!(factor_sum_out(&g, 1).unwrap().table(), &[4.0, 6.0]);
        assert!(matches!(factor_sum_out(&g, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn reorder_moves_eliminated_variable_last() {
        // h(Y, X2, X1) -> h(X1, X2, Y): the entry <Y=1, X2=1, X1=0> (index 12)
        // becomes <X1=0, X2=1, Y=1> (index 4).
        let (x1, x2, y) = (0, 1, 2);
        let h = Factor::new(
            vec![y, x2, x1],
            vec![3, 3, 3],
            (0..27).map(f64::from).collect(),
        )
        .unwrap();
        let r = h.reordered(&[x1, x2, y]).unwrap();
        assert_eq!(r.table()[4], 12.0);
        assert_eq!(r.table()[3], 3.0);
        assert_eq!(r.table()[5], 21.0);
        assert!(h.reordered(&[x1, y]).is_err());
    }

    #[test]
    fn conditioning_slices() {
        let f = Factor::new(vec![0, 1], vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let c = f.conditioned(0, 1).unwrap();
        assert_eq!(c.scope(), &[1]);
        assert_eq!(c.table(), &[3.0, 4.0, 5.0]);
        let c = f.conditioned(1, 2).unwrap();
        assert_eq!(c.table(), &[2.0, 5.0]);
        assert!(matches!(f.conditioned(1, 3), Err(Error::Domain(_))));
    }
}
