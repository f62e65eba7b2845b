use std::collections::HashMap;

pub type Gram = Vec<String>;

pub fn counts(toks: &[String], n: usize) -> HashMap<Gram, u64> {
    let mut m = HashMap::new();
    if n == 0 || toks.len() < n {
        return m;
    }
    for w in toks.windows(n) {
        *m.entry(w.to_vec()).or_default() += 1;
    }
    m
}
