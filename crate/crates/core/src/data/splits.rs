//! Stratified train/val/test-A split with a GA-only test-B set.

use super::format::parse_key_values;
use super::generator::Disease;
use crate::error::{Error, Result};
use crate::rng::RngState;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    TestA,
    TestB,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::TestA, Split::TestB];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::TestA => "testA",
            Split::TestB => "testB",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown split {s:?} (train, val, testA, testB)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test_a: usize,
    pub test_b: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 31,
            val: 4,
            test_a: 15,
            test_b: 10,
        }
    }
}

impl SplitCounts {
    /// Default proportions applied to `non_ga` stratifiable volumes and
    /// `ga` late-AMD volumes.
    pub fn scaled(non_ga: usize, ga: usize) -> Self {
        let d = SplitCounts::default();
        let base = d.train + d.val + d.test_a;
        let val = ((non_ga * d.val + base / 2) / base).max(1).min(non_ga.saturating_sub(2));
        let test_a = ((non_ga * d.test_a + base / 2) / base).max(1).min(non_ga.saturating_sub(val + 1));
        SplitCounts {
            train: non_ga.saturating_sub(val + test_a),
            val,
            test_a,
            test_b: ga,
        }
    }

    fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::TestA => self.test_a,
            Split::TestB => self.test_b,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitManifest {
    pub ids: BTreeMap<Split, Vec<String>>,
    /// Volumes per (split, disease).
    pub proportions: BTreeMap<(Split, Disease), usize>,
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        self.ids.get(&split).map_or(&[], |v| v.as_slice())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for split in Split::ALL {
            let _ = writeln!(s, "{}={}", split.name(), self.ids(split).join(","));
        }
        for ((split, disease), n) in &self.proportions {
            let _ = writeln!(s, "proportion.{}.{}={n}", split.name(), disease.name());
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut m = SplitManifest::default();
        for (k, v) in parse_key_values(text, origin)? {
            if let Some(rest) = k.strip_prefix("proportion.") {
                let (split, disease) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::format(origin, format!("bad key {k:?}")))?;
                let n = v
                    .parse()
                    .map_err(|_| Error::format(origin, format!("bad count for {k:?}")))?;
                m.proportions.insert((split.parse()?, disease.parse()?), n);
            } else {
                let split: Split = k
                    .parse()
                    .map_err(|_| Error::format(origin, format!("unknown key {k:?}")))?;
                let ids = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
                m.ids.insert(split, ids);
            }
        }
        Ok(m)
    }
}

/// Assigns `volumes` (id, disease) to splits. Late-AMD GA volumes only go to
/// test B; the other volumes are split so that every disease's share of
/// each split is its quota rounded up or down.
pub fn make_splits(
    volumes: &[(String, Disease)],
    counts: SplitCounts,
    rng: &mut RngState,
) -> Result<SplitManifest> {
    let mut by_disease: BTreeMap<Disease, Vec<String>> = BTreeMap::new();
    for (id, d) in volumes {
        by_disease.entry(*d).or_default().push(id.clone());
    }
    for ids in by_disease.values_mut() {
        ids.sort();
        rng.shuffle(ids);
    }
    let mut manifest = SplitManifest::default();

    let ga = by_disease.remove(&Disease::LateAmdGa).unwrap_or_default();
    if ga.len() < counts.test_b {
        return Err(Error::invalid(format!(
            "test B needs {} late-AMD GA volumes, found {}",
            counts.test_b,
            ga.len()
        )));
    }
    manifest.ids.insert(Split::TestB, ga[..counts.test_b].to_vec());
    manifest
        .proportions
        .insert((Split::TestB, Disease::LateAmdGa), counts.test_b);

    let splits = [Split::Train, Split::Val, Split::TestA];
    let wanted: usize = splits.iter().map(|&s| counts.get(s)).sum();
    let diseases: Vec<Disease> = by_disease.keys().copied().collect();
    let sizes: Vec<usize> = by_disease.values().map(Vec::len).collect();
    let available: usize = sizes.iter().sum();
    if available < wanted {
        return Err(Error::invalid(format!(
            "train/val/test A need {wanted} non-GA volumes, found {available}"
        )));
    }
    // Only `wanted` volumes are used; scale each disease down to a share of
    // them first, then distribute the shares over the splits.
    let used = round_with_total(&sizes, wanted, rng);
    let row_totals: Vec<usize> = splits.iter().map(|&s| counts.get(s)).collect();
    let table = controlled_rounding(&row_totals, &used, rng)?;

    let mut cursor = vec![0usize; diseases.len()];
    for (si, &split) in splits.iter().enumerate() {
        let mut ids = Vec::new();
        for (di, d) in diseases.iter().enumerate() {
            let n = table[si][di];
            ids.extend_from_slice(&by_disease[d][cursor[di]..cursor[di] + n]);
            cursor[di] += n;
            if n > 0 {
                manifest.proportions.insert((split, *d), n);
            }
        }
        ids.sort();
        manifest.ids.insert(split, ids);
    }
    Ok(manifest)
}

/// Integer vector proportional to `sizes` with the given total, each entry
/// the floor or ceiling of its quota.
fn round_with_total(sizes: &[usize], total: usize, rng: &mut RngState) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    let table = controlled_rounding(&[total, sum - total], sizes, rng)
        .expect("a two-row rounding always exists");
    table[0].clone()
}

/// Integer `rows × cols` table with the given margins whose cells are the
/// floor or ceiling of `row_i * col_j / total`. Solved as a max-flow over
/// the cells that may round up.
fn controlled_rounding(rows: &[usize], cols: &[usize], rng: &mut RngState) -> Result<Vec<Vec<usize>>> {
    let total: usize = cols.iter().sum();
    if rows.iter().sum::<usize>() != total {
        return Err(Error::invalid("rounding margins disagree"));
    }
    let mut table = vec![vec![0usize; cols.len()]; rows.len()];
    let mut can_up = vec![vec![false; cols.len()]; rows.len()];
    let mut row_left: Vec<usize> = rows.to_vec();
    let mut col_left: Vec<usize> = cols.to_vec();
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            if total == 0 {
                continue;
            }
            let q = r * c;
            table[i][j] = q / total;
            can_up[i][j] = q % total != 0;
            row_left[i] -= table[i][j];
            col_left[j] -= table[i][j];
        }
    }
    // Augmenting paths from rows with residual demand to columns.
    let mut order: Vec<usize> = (0..cols.len()).collect();
    rng.shuffle(&mut order);
    let mut used = vec![vec![false; cols.len()]; rows.len()];
    fn augment(
        i: usize,
        order: &[usize],
        can_up: &[Vec<bool>],
        used: &mut [Vec<bool>],
        col_left: &mut [usize],
        seen: &mut [bool],
    ) -> bool {
        for &j in order {
            if !can_up[i][j] || used[i][j] || seen[j] {
                continue;
            }
            seen[j] = true;
            if col_left[j] > 0 {
                col_left[j] -= 1;
                used[i][j] = true;
                return true;
            }
            // Take column j from another row that could move elsewhere.
            for k in 0..used.len() {
                if used[k][j] && augment(k, order, can_up, used, col_left, seen) {
                    used[k][j] = false;
                    used[i][j] = true;
                    return true;
                }
            }
        }
        false
    }
    for i in 0..rows.len() {
        while row_left[i] > 0 {
            let mut seen = vec![false; cols.len()];
            if !augment(i, &order, &can_up, &mut used, &mut col_left, &mut seen) {
                return Err(Error::invalid("no proportional split exists"));
            }
            row_left[i] -= 1;
        }
    }
    for i in 0..rows.len() {
        for j in 0..cols.len() {
            table[i][j] += used[i][j] as usize;
        }
    }
    Ok(table)
}
