//! BIC scoring and greedy hill-climbing structure search.

use std::collections::{BTreeSet, HashMap};

use super::dag::{Dag, VarKind};
use super::data::Dataset;

/// Edges the search may never add, by (parent, child) name. Edges into
/// parameter nodes are always excluded regardless of this list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeBlacklist {
    forbidden: BTreeSet<(String, String)>,
}

impl EdgeBlacklist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forbid(mut self, parent: impl Into<String>, child: impl Into<String>) -> Self {
        self.forbidden.insert((parent.into(), child.into()));
        self
    }

    pub fn is_forbidden(&self, parent: &str, child: &str) -> bool {
        self.forbidden.contains(&(parent.to_string(), child.to_string()))
    }
}

/// Decomposable BIC with a per-family cache.
struct Scorer<'a> {
    data: &'a Dataset,
    cards: Vec<usize>,
    ln_n: f64,
    cache: HashMap<(usize, Vec<usize>), f64>,
}

impl<'a> Scorer<'a> {
    fn new(data: &'a Dataset) -> Self {
        Scorer {
            data,
            cards: data.variables().iter().map(|v| v.cardinality()).collect(),
            ln_n: (data.len().max(1) as f64).ln(),
            cache: HashMap::new(),
        }
    }

    fn family(&mut self, node: usize, parents: &[usize]) -> f64 {
        let key = (node, parents.to_vec());
        if let Some(&s) = self.cache.get(&key) {
            return s;
        }
        let s = family_bic(self.data, &self.cards, self.ln_n, node, parents);
        self.cache.insert(key, s);
        s
    }
}

fn family_bic(data: &Dataset, cards: &[usize], ln_n: f64, node: usize, parents: &[usize]) -> f64 {
    let r = cards[node];
    let q: usize = parents.iter().map(|&p| cards[p]).product();
    let mut counts = vec![0u64; q * r];
    for row in data.rows() {
        let combo = parents
            .iter()
            .fold(0, |acc, &p| acc * cards[p] + row.states[p]);
        counts[combo * r + row.states[node]] += 1;
    }
    let mut ll = 0.0;
    for chunk in counts.chunks(r) {
        let total: u64 = chunk.iter().sum();
        if total == 0 {
            continue;
        }
        let total = total as f64;
        for &c in chunk {
            if c > 0 {
                let c = c as f64;
                ll += c * (c / total).ln();
            }
        }
    }
    ll - 0.5 * ln_n * ((r - 1) * q) as f64
}

/// Log-likelihood under maximum-likelihood CPTs minus `(ln N / 2)` times the
/// number of free parameters.
pub fn bic_score(dag: &Dag, data: &Dataset) -> f64 {
    let mut scorer = Scorer::new(data);
    (0..dag.len())
        .map(|node| scorer.family(node, &dag.parents(node)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Move {
    Add(usize, usize),
    Remove(usize, usize),
    Reverse(usize, usize),
}

/// Steepest-ascent hill climbing from the empty graph over single-edge
/// additions, removals and reversals. Equal gains resolve to the first move
/// in (parent name, child name, add < remove < reverse) order.
pub fn learn_structure(data: &Dataset, blacklist: &EdgeBlacklist) -> Dag {
    let vars = data.variables().to_vec();
    let mut dag = Dag::empty(vars.clone()).expect("dataset variables are valid");
    if data.is_empty() {
        return dag;
    }
    let mut scorer = Scorer::new(data);
    let n = vars.len();

    let mut by_name: Vec<usize> = (0..n).collect();
    by_name.sort_by(|&a, &b| vars[a].name.cmp(&vars[b].name));
    let allowed = |p: usize, c: usize| {
        p != c
            && vars[c].kind != VarKind::Parameter
            && !blacklist.is_forbidden(&vars[p].name, &vars[c].name)
    };

    const MIN_GAIN: f64 = 1e-9;
    loop {
        let mut best: Option<(f64, Move)> = None;
        let mut consider = |gain: f64, mv: Move| {
            if gain > MIN_GAIN && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, mv));
            }
        };
        for &p in &by_name {
            for &c in &by_name {
                if p == c {
                    continue;
                }
                if dag.has_edge(p, c) {
                    let parents = dag.parents(c);
                    let without: Vec<usize> = parents.iter().copied().filter(|&x| x != p).collect();
                    let old_c = scorer.family(c, &parents);
                    let new_c = scorer.family(c, &without);
                    consider(new_c - old_c, Move::Remove(p, c));

                    if allowed(c, p) {
                        let mut trial = dag.clone();
                        trial.remove_edge(p, c);
                        if trial.add_edge(c, p).is_ok() {
                            let pp = dag.parents(p);
                            let mut with: Vec<usize> = pp.clone();
                            with.push(c);
                            with.sort_unstable();
                            let gain = new_c - old_c + scorer.family(p, &with)
                                - scorer.family(p, &pp);
                            consider(gain, Move::Reverse(p, c));
                        }
                    }
                } else if !dag.has_edge(c, p) && allowed(p, c) && !dag.has_path(c, p) {
                    let parents = dag.parents(c);
                    let mut with = parents.clone();
                    with.push(p);
                    with.sort_unstable();
                    let gain = scorer.family(c, &with) - scorer.family(c, &parents);
                    consider(gain, Move::Add(p, c));
                }
            }
        }
        match best {
            None => break,
            Some((_, Move::Add(p, c))) => dag.add_edge(p, c).expect("checked acyclic"),
            Some((_, Move::Remove(p, c))) => {
                dag.remove_edge(p, c);
            }
            Some((_, Move::Reverse(p, c))) => {
                dag.remove_edge(p, c);
                dag.add_edge(c, p).expect("checked acyclic");
            }
        }
    }
    dag
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesnet::dag::VariableDef;
    use crate::bayesnet::data::ObservationRow;

    #[test]
    fn single_binary_variable_by_hand() {
        let vars = vec![VariableDef::slo("x")];
        let rows = (0..8).map(|i| ObservationRow::new(vec![i % 2])).collect();
        let data = Dataset::new(vars.clone(), rows).unwrap();
        let expected = 8.0 * 0.5f64.ln() - 8f64.ln() / 2.0;
        let got = bic_score(&Dag::empty(vars).unwrap(), &data);
        assert!((got - expected).abs() < 1e-12);
        assert!((got - (-6.5849)).abs() < 1e-3);
    }

    #[test]
    fn single_variable_learns_nothing() {
        let vars = vec![VariableDef::slo("x")];
        let rows = (0..20).map(|i| ObservationRow::new(vec![i % 3 % 2])).collect();
        let data = Dataset::new(vars, rows).unwrap();
        assert_eq!(learn_structure(&data, &EdgeBlacklist::new()).edge_count(), 0);
    }

    #[test]
    fn copies_are_linked_unless_blacklisted() {
        let vars = vec![VariableDef::slo("a"), VariableDef::slo("b")];
        let rows = (0..200).map(|i| ObservationRow::new(vec![i % 2, i % 2])).collect();
        let data = Dataset::new(vars, rows).unwrap();
        let dag = learn_structure(&data, &EdgeBlacklist::new());
        assert_eq!(dag.edge_count(), 1);
        let bl = EdgeBlacklist::new().forbid("a", "b").forbid("b", "a");
        assert_eq!(learn_structure(&data, &bl).edge_count(), 0);
    }

    #[test]
    fn parameters_stay_roots() {
        let vars = vec![
            VariableDef::parameter("p", vec!["0".into(), "1".into()]),
            VariableDef::slo("s"),
        ];
        let rows = (0..200).map(|i| ObservationRow::new(vec![i % 2, i % 2])).collect();
        let data = Dataset::new(vars, rows).unwrap();
        let dag = learn_structure(&data, &EdgeBlacklist::new());
        assert_eq!(dag.edge_names(), vec![("p".to_string(), "s".to_string())]);
    }
}
