//! Dense discrete factors and the sum-product kernel used by elimination.

/// Table over `vars`, row-major with the first variable most significant.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Factor {
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub values: Vec<f64>,
}

impl Factor {
    pub fn scalar(v: f64) -> Self {
        Self {
            vars: Vec::new(),
            cards: Vec::new(),
            values: vec![v],
        }
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.vars.len()];
        for i in (0..self.vars.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.cards[i + 1];
        }
        s
    }

    /// Fixes every variable that appears in `fixed` (indexed by variable id).
    pub fn reduce(&self, fixed: &[Option<usize>]) -> Factor {
        if self.vars.iter().all(|&v| fixed[v].is_none()) {
            return self.clone();
        }
        let strides = self.strides();
        let mut base = 0;
        let mut vars = Vec::new();
        let mut cards = Vec::new();
        let mut kept_strides = Vec::new();
        for (i, &v) in self.vars.iter().enumerate() {
            match fixed[v] {
                Some(x) => base += x * strides[i],
                None => {
                    vars.push(v);
                    cards.push(self.cards[i]);
                    kept_strides.push(strides[i]);
                }
            }
        }
        let total: usize = cards.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut assign = vec![0usize; vars.len()];
        let mut idx = base;
        for _ in 0..total {
            values.push(self.values[idx]);
            let mut p = vars.len();
            while p > 0 {
                p -= 1;
                assign[p] += 1;
                idx += kept_strides[p];
                if assign[p] < cards[p] {
                    break;
                }
                idx -= kept_strides[p] * cards[p];
                assign[p] = 0;
            }
        }
        Factor { vars, cards, values }
    }

    /// Product of `factors`, summing out `eliminate` if given.
    pub fn combine(factors: &[&Factor], eliminate: Option<usize>) -> Factor {
        let mut vars: Vec<usize> = Vec::new();
        let mut cards: Vec<usize> = Vec::new();
        for f in factors {
            for (i, &v) in f.vars.iter().enumerate() {
                if Some(v) != eliminate && !vars.contains(&v) {
                    vars.push(v);
                    cards.push(f.cards[i]);
                }
            }
        }
        let out_vars = vars.clone();
        let out_cards = cards.clone();
        let inner = match eliminate {
            Some(e) => {
                let card = factors
                    .iter()
                    .find_map(|f| f.vars.iter().position(|&v| v == e).map(|i| f.cards[i]))
                    .unwrap_or(1);
                vars.push(e);
                cards.push(card);
                card
            }
            None => 1,
        };
        // stride of every combined position inside every factor
        let strides: Vec<Vec<usize>> = factors
            .iter()
            .map(|f| {
                let own = f.strides();
                vars.iter()
                    .map(|v| f.vars.iter().position(|u| u == v).map_or(0, |i| own[i]))
                    .collect()
            })
            .collect();
        let out_len: usize = out_cards.iter().product();
        let mut out = vec![0.0; out_len];
        let mut idx = vec![0usize; factors.len()];
        let mut assign = vec![0usize; vars.len()];
        let n = vars.len();
        for slot in out.iter_mut() {
            let mut sum = 0.0;
            for _ in 0..inner {
                let mut prod = 1.0;
                for (f, &i) in factors.iter().zip(&idx) {
                    prod *= f.values[i];
                }
                sum += prod;
                let mut p = n;
                while p > 0 {
                    p -= 1;
                    assign[p] += 1;
                    for (i, s) in idx.iter_mut().zip(&strides) {
                        *i += s[p];
                    }
                    if assign[p] < cards[p] {
                        break;
                    }
                    for (i, s) in idx.iter_mut().zip(&strides) {
                        *i -= s[p] * cards[p];
                    }
                    assign[p] = 0;
                }
            }
            *slot = sum;
        }
        Factor {
            vars: out_vars,
            cards: out_cards,
            values: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(vars: &[usize], cards: &[usize], values: &[f64]) -> Factor {
        Factor {
            vars: vars.to_vec(),
            cards: cards.to_vec(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn product_and_marginal_by_hand() {
        // P(A) and P(B|A)
        let a = f(&[0], &[2], &[0.4, 0.6]);
        let ba = f(&[0, 1], &[2, 2], &[0.8, 0.2, 0.1, 0.9]);
        let joint = Factor::combine(&[&a, &ba], None);
        assert_eq!(joint.vars, vec![0, 1]);
        assert_eq!(joint.values, vec![0.4 * 0.8, 0.4 * 0.2, 0.6 * 0.1, 0.6 * 0.9]);
        let b = Factor::combine(&[&a, &ba], Some(0));
        assert_eq!(b.vars, vec![1]);
        assert!((b.values[1] - 0.62).abs() < 1e-15);
    }

    #[test]
    fn reduce_fixes_middle_variable() {
        let t = f(&[0, 1, 2], &[2, 3, 2], &(0..12).map(f64::from).collect::<Vec<_>>());
        let mut fixed = vec![None; 3];
        fixed[1] = Some(2);
        let r = t.reduce(&fixed);
        assert_eq!(r.vars, vec![0, 2]);
        assert_eq!(r.values, vec![4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn shared_variable_order_differs_between_factors() {
        let x = f(&[1, 0], &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = f(&[0], &[3], &[1.0, 10.0, 100.0]);
        let s = Factor::combine(&[&x, &y], Some(0));
        assert_eq!(s.vars, vec![1]);
        assert_eq!(s.values, vec![1.0 + 20.0 + 300.0, 4.0 + 50.0 + 600.0]);
    }
}
