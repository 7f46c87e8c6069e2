//! Synthetic grid-transformation tasks that are correct by construction,
//! plus an importer for the public two-key task JSON layout.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::reasoning::ExamplePair;

pub type Grid = Vec<Vec<u8>>;

pub const MAX_SIDE: usize = 10;
pub const TRAIN_PAIRS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "rotate90")]
    Rotate90,
    #[serde(rename = "rotate180")]
    Rotate180,
    #[serde(rename = "reflectH")]
    ReflectH,
    #[serde(rename = "reflectV")]
    ReflectV,
    #[serde(rename = "color_map")]
    ColorMap,
    #[serde(rename = "tile2x2")]
    Tile2x2,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::Rotate90, Family::Rotate180, Family::ReflectH, Family::ReflectV, Family::ColorMap, Family::Tile2x2];

    pub fn key(self) -> &'static str {
        match self {
            Family::Rotate90 => "rotate90",
            Family::Rotate180 => "rotate180",
            Family::ReflectH => "reflectH",
            Family::ReflectV => "reflectV",
            Family::ColorMap => "color_map",
            Family::Tile2x2 => "tile2x2",
        }
    }

    pub fn from_key(key: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.key() == key)
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::from_key(s).ok_or_else(|| {
            let known: Vec<&str> = Family::ALL.iter().map(|f| f.key()).collect();
            format!("unknown family '{s}'; expected one of {}", known.join(", "))
        })
    }
}

impl Family {
    /// Applies the rule given example pairs; only `color_map` reads them.
    /// `None` means the rule cannot produce an output for this input.
    pub fn predict(self, train: &[ExamplePair], input: &Grid) -> Option<Grid> {
        match self {
            Family::Rotate90 => Some(rotate90(input)),
            Family::Rotate180 => Some(rotate180(input)),
            Family::ReflectH => Some(reflect_h(input)),
            Family::ReflectV => Some(reflect_v(input)),
            Family::Tile2x2 => Some(tile2x2(input)),
            Family::ColorMap => infer_color_map(train).and_then(|m| recolor(input, &m)),
        }
    }

    /// True when the rule reproduces every example output.
    pub fn explains(self, train: &[ExamplePair]) -> bool {
        train.iter().all(|p| self.predict(train, &p.input).as_ref() == Some(&p.output))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

fn dims(g: &Grid) -> (usize, usize) {
    (g.len(), g.first().map_or(0, Vec::len))
}

pub fn rotate90(g: &Grid) -> Grid {
    let (h, w) = dims(g);
    (0..w).map(|i| (0..h).map(|j| g[h - 1 - j][i]).collect()).collect()
}

pub fn rotate180(g: &Grid) -> Grid {
    g.iter().rev().map(|row| row.iter().rev().copied().collect()).collect()
}

pub fn reflect_h(g: &Grid) -> Grid {
    g.iter().map(|row| row.iter().rev().copied().collect()).collect()
}

pub fn reflect_v(g: &Grid) -> Grid {
    g.iter().rev().cloned().collect()
}

pub fn tile2x2(g: &Grid) -> Grid {
    let (h, w) = dims(g);
    (0..2 * h).map(|i| (0..2 * w).map(|j| g[i % h][j % w]).collect()).collect()
}

/// A per-color mapping consistent with every pair, if one exists.
pub fn infer_color_map(train: &[ExamplePair]) -> Option<[Option<u8>; 10]> {
    let mut map = [None; 10];
    for p in train {
        if dims(&p.input) != dims(&p.output) {
            return None;
        }
        for (ri, ro) in p.input.iter().zip(&p.output) {
            for (&a, &b) in ri.iter().zip(ro) {
                match map[a as usize] {
                    None => map[a as usize] = Some(b),
                    Some(prev) if prev != b => return None,
                    _ => {}
                }
            }
        }
    }
    Some(map)
}

pub fn recolor(g: &Grid, map: &[Option<u8>; 10]) -> Option<Grid> {
    g.iter().map(|row| row.iter().map(|&c| map[c as usize]).collect()).collect()
}

/// Cell counts per color.
pub fn histogram(g: &Grid) -> [usize; 10] {
    let mut h = [0; 10];
    for &c in g.iter().flatten() {
        h[c as usize] += 1;
    }
    h
}

pub const FEATURE_TAGS: [&str; 5] = ["shape:same", "shape:transposed", "shape:doubled", "palette:same", "palette:permuted"];

/// Observable tags that hold for every example pair.
pub fn task_tags(train: &[ExamplePair]) -> BTreeSet<String> {
    let all = |f: &dyn Fn(&ExamplePair) -> bool| !train.is_empty() && train.iter().all(f);
    let mut tags = BTreeSet::new();
    let same_palette = |p: &ExamplePair| {
        let (a, b) = (histogram(&p.input), histogram(&p.output));
        let (na, nb) = (a.iter().sum::<usize>(), b.iter().sum::<usize>());
        (0..10).all(|c| a[c] * nb == b[c] * na)
    };
    let permuted_palette = |p: &ExamplePair| {
        let (mut a, mut b) = (histogram(&p.input), histogram(&p.output));
        a.sort_unstable();
        b.sort_unstable();
        a == b
    };
    if all(&|p| dims(&p.input) == dims(&p.output)) {
        tags.insert("shape:same".to_string());
    }
    if all(&|p| {
        let (h, w) = dims(&p.input);
        dims(&p.output) == (w, h)
    }) {
        tags.insert("shape:transposed".to_string());
    }
    if all(&|p| {
        let (h, w) = dims(&p.input);
        dims(&p.output) == (2 * h, 2 * w)
    }) {
        tags.insert("shape:doubled".to_string());
    }
    if all(&same_palette) {
        tags.insert("palette:same".to_string());
    } else if all(&permuted_palette) {
        tags.insert("palette:permuted".to_string());
    }
    tags
}

/// Tags as a 0/1 vector in [`FEATURE_TAGS`] order.
pub fn feature_vector(tags: &BTreeSet<String>) -> Vec<f64> {
    FEATURE_TAGS.iter().map(|t| if tags.contains(*t) { 1.0 } else { 0.0 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTask {
    pub id: String,
    /// Generating rule; absent for imported tasks.
    pub family: Option<Family>,
    pub seed: u64,
    pub train: Vec<ExamplePair>,
    /// Test inputs with their hidden outputs.
    pub test: Vec<ExamplePair>,
}

impl GridTask {
    pub fn family_key(&self) -> &str {
        self.family.map_or("unknown", Family::key)
    }

    pub fn tags(&self) -> BTreeSet<String> {
        task_tags(&self.train)
    }
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid {
    let n = h * w;
    let lo = (3 * n).div_ceil(10).max(1);
    let hi = (7 * n / 10).max(lo);
    let filled = rng.gen_range(lo..=hi);
    let mut cells: Vec<usize> = (0..n).collect();
    cells.shuffle(rng);
    let mut g = vec![vec![0u8; w]; h];
    for &c in &cells[..filled] {
        g[c / w][c % w] = rng.gen_range(1..=9);
    }
    g
}

/// Rejects tasks where the examples do not pin down the test answer: the
/// generating rule must predict the hidden output, and every other rule
/// that fits the examples must predict the same thing.
fn identifiable(family: Family, train: &[ExamplePair], test: &ExamplePair) -> bool {
    if family.predict(train, &test.input).as_ref() != Some(&test.output) {
        return false;
    }
    if family == Family::ColorMap && !task_tags(train).contains("palette:permuted") {
        return false;
    }
    Family::ALL
        .into_iter()
        .filter(|f| *f != family && f.explains(train))
        .all(|f| f.predict(train, &test.input).as_ref() == Some(&test.output))
}

fn generate_one(family: Family, rng: &mut ChaCha8Rng) -> (Vec<ExamplePair>, Vec<ExamplePair>) {
    let max_side = if family == Family::Tile2x2 { MAX_SIDE / 2 } else { 6 };
    loop {
        let square = family == Family::Rotate90 && rng.gen_bool(0.3);
        let h = rng.gen_range(3..=max_side);
        let w = if square { h } else { rng.gen_range(3..=max_side) };
        let mut palette: Vec<u8> = (1..=9).collect();
        palette.shuffle(rng);
        let mut map = [None; 10];
        map[0] = Some(0);
        for (i, c) in palette.iter().enumerate() {
            map[i + 1] = Some(*c);
        }
        let make = |input: Grid| {
            let output = match family {
                Family::ColorMap => recolor(&input, &map).expect("full map"),
                f => f.predict(&[], &input).expect("geometric rules are total"),
            };
            ExamplePair { input, output }
        };
        let train: Vec<ExamplePair> = (0..TRAIN_PAIRS).map(|_| make(random_grid(rng, h, w))).collect();
        let test = make(random_grid(rng, h, w));
        if identifiable(family, &train, &test) {
            return (train, vec![test]);
        }
    }
}

/// `count` tasks of one family; identical for identical `(family, count, seed)`.
pub fn generate_tasks(family: Family, count: usize, seed: u64) -> Result<Vec<GridTask>, HarnessError> {
    if count == 0 {
        return Err(HarnessError::InvalidRequest("count must be at least 1".into()));
    }
    let family_index = Family::ALL.iter().position(|f| *f == family).expect("listed") as u64;
    let mut master = ChaCha8Rng::seed_from_u64(seed ^ (family_index << 56));
    Ok((0..count)
        .map(|i| {
            let task_seed: u64 = master.gen();
            let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
            let (train, test) = generate_one(family, &mut rng);
            GridTask { id: format!("{}-{seed}-{i}", family.key()), family: Some(family), seed: task_seed, train, test }
        })
        .collect())
}

/// `count` tasks cycling through `families` in order.
pub fn generate_suite(families: &[Family], count: usize, seed: u64) -> Result<Vec<GridTask>, HarnessError> {
    if families.is_empty() {
        return Err(HarnessError::InvalidRequest("no families given".into()));
    }
    let per: Vec<usize> = (0..families.len()).map(|i| (count + families.len() - 1 - i) / families.len()).collect();
    let mut lists = Vec::new();
    for (f, n) in families.iter().zip(&per) {
        lists.push(if *n == 0 { Vec::new() } else { generate_tasks(*f, *n, seed)? });
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let (fi, k) = (i % families.len(), i / families.len());
        out.push(lists[fi][k].clone());
    }
    Ok(out)
}

#[derive(Deserialize)]
struct ArcPair {
    input: Grid,
    output: Grid,
}

#[derive(Deserialize)]
struct ArcFile {
    train: Vec<ArcPair>,
    test: Vec<ArcPair>,
}

fn check_grid(g: &Grid, at: &str) -> Result<(), HarnessError> {
    let (h, w) = dims(g);
    if h == 0 || w == 0 || h > 30 || w > 30 {
        return Err(HarnessError::InvalidTask(format!("{at}: grid must be 1..=30 on each side, got {h}x{w}")));
    }
    if g.iter().any(|r| r.len() != w) {
        return Err(HarnessError::InvalidTask(format!("{at}: ragged rows")));
    }
    if g.iter().flatten().any(|&c| c > 9) {
        return Err(HarnessError::InvalidTask(format!("{at}: colors must be 0-9")));
    }
    Ok(())
}

/// Reads a task in the public `{train, test}` layout.
pub fn import_arc_json(id: &str, text: &str) -> Result<GridTask, HarnessError> {
    let f: ArcFile = serde_json::from_str(text).map_err(|e| HarnessError::InvalidTask(format!("{id}: {e}")))?;
    let convert = |pairs: Vec<ArcPair>, part: &str| -> Result<Vec<ExamplePair>, HarnessError> {
        pairs
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                check_grid(&p.input, &format!("{id}.{part}[{i}].input"))?;
                check_grid(&p.output, &format!("{id}.{part}[{i}].output"))?;
                Ok(ExamplePair { input: p.input, output: p.output })
            })
            .collect()
    };
    let train = convert(f.train, "train")?;
    if train.len() < 2 {
        return Err(HarnessError::InvalidTask(format!("{id}: at least 2 train pairs are required")));
    }
    let test = convert(f.test, "test")?;
    let family = Family::ALL.into_iter().find(|fam| fam.explains(&train));
    Ok(GridTask { id: id.to_string(), family, seed: 0, train, test })
}

/// ASCII dump, one row per line, `.` for background.
pub fn render(g: &Grid) -> String {
    g.iter()
        .map(|row| row.iter().map(|&c| if c == 0 { '.' } else { (b'0' + c) as char }).collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_by_hand() {
        assert_eq!(rotate90(&vec![vec![1, 0], vec![0, 0]]), vec![vec![0, 1], vec![0, 0]]);
        let g = vec![vec![1, 2, 3], vec![4, 5, 6]];
        assert_eq!(rotate90(&g), vec![vec![4, 1], vec![5, 2], vec![6, 3]]);
        assert_eq!(rotate180(&g), vec![vec![6, 5, 4], vec![3, 2, 1]]);
        assert_eq!(reflect_h(&g), vec![vec![3, 2, 1], vec![6, 5, 4]]);
        assert_eq!(reflect_v(&g), vec![vec![4, 5, 6], vec![1, 2, 3]]);
        assert_eq!(tile2x2(&vec![vec![1, 2]]), vec![vec![1, 2, 1, 2], vec![1, 2, 1, 2]]);
        assert_eq!(reflect_h(&reflect_h(&g)), g);
    }

    #[test]
    fn generation_is_deterministic_and_correct() {
        for f in Family::ALL {
            let a = generate_tasks(f, 5, 11).unwrap();
            assert_eq!(a, generate_tasks(f, 5, 11).unwrap());
            for t in &a {
                assert!(t.train.len() >= 2);
                for p in t.train.iter().chain(&t.test) {
                    assert_eq!(f.predict(&t.train, &p.input).as_ref(), Some(&p.output));
                    let cells = p.input.len() * p.input[0].len();
                    let filled = p.input.iter().flatten().filter(|&&c| c != 0).count();
                    assert!(filled * 10 >= 3 * cells && filled * 10 <= 7 * cells);
                    assert!(p.output.len() <= MAX_SIDE && p.output[0].len() <= MAX_SIDE);
                }
            }
        }
        assert!(generate_tasks(Family::Rotate90, 0, 1).is_err());
    }

    #[test]
    fn tags_match_families() {
        let t = &generate_tasks(Family::Tile2x2, 1, 3).unwrap()[0];
        assert!(t.tags().contains("shape:doubled") && t.tags().contains("palette:same"));
        let t = &generate_tasks(Family::ColorMap, 1, 3).unwrap()[0];
        assert!(t.tags().contains("palette:permuted"));
        let t = &generate_tasks(Family::ReflectV, 1, 3).unwrap()[0];
        assert_eq!(feature_vector(&t.tags()), vec![1.0, (t.train[0].input.len() == t.train[0].input[0].len()) as u8 as f64, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn suite_interleaves() {
        let s = generate_suite(&[Family::Rotate90, Family::Tile2x2], 5, 2).unwrap();
        let fams: Vec<_> = s.iter().map(|t| t.family.unwrap()).collect();
        assert_eq!(fams, vec![Family::Rotate90, Family::Tile2x2, Family::Rotate90, Family::Tile2x2, Family::Rotate90]);
    }

    #[test]
    fn arc_import() {
        let text = r#"{"train":[{"input":[[1,0],[2,0]],"output":[[0,1],[0,2]]},{"input":[[2,3],[0,5]],"output":[[3,2],[5,0]]}],
                       "test":[{"input":[[4,0]],"output":[[0,4]]}]}"#;
        let t = import_arc_json("x", text).unwrap();
        assert_eq!(t.family, Some(Family::ReflectH));
        assert_eq!(t.test.len(), 1);
        assert!(import_arc_json("bad", r#"{"train":[{"input":[[12]],"output":[[1]]}],"test":[]}"#).is_err());
        assert!(import_arc_json("bad", "{").is_err());
        assert_eq!(render(&vec![vec![0, 3]]), ".3");
    }
}
