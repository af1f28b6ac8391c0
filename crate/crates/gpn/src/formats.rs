//! Text file formats. Every file starts with a kind/version line and a
//! provenance line (config hash, seed, crate versions); floats are written
//! in shortest round-trip form so save/load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gpn_core::baselines::BayesOptState;
use gpn_core::gpn::{Discriminator, Generator, Normalizer, TrainingLog};
use gpn_core::kinematics::Policy;
use gpn_core::neuralnet::{Activation, DenseNet, LayerShape};
use gpn_core::repertoire::{Repertoire, RepertoireEntry, RepertoireMeta};
use gpn_core::world::{Aabb, Episode, FloorBounds, ObstacleWorld};
use serde::Serialize;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Where an output file came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header(&self, kind: &str) -> String {
        format!(
            "# gpn-{kind} v{FORMAT_VERSION}\n# config_hash={} seed={} gpn-core={} gpn={}\n",
            self.config_hash,
            self.seed,
            gpn_core::VERSION,
            env!("CARGO_PKG_VERSION")
        )
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Line cursor that skips comments and blank lines and reports 1-based
/// line numbers.
struct Lines<'a> {
    path: PathBuf,
    lines: Vec<(usize, &'a str)>,
    pos: usize,
    last: usize,
}

impl<'a> Lines<'a> {
    /// Checks the kind/version line, then iterates the data lines.
    fn open(path: &Path, text: &'a str, kind: &str) -> Result<Self> {
        let path = path.to_path_buf();
        let first = text.lines().next().unwrap_or("");
        let prefix = format!("# gpn-{kind} v");
        let Some(version) = first.strip_prefix(&prefix) else {
            return Err(Error::Parse {
                path,
                line: 1,
                message: format!("expected a `{prefix}N` header"),
            });
        };
        if version.trim() != FORMAT_VERSION.to_string() {
            return Err(Error::UnsupportedVersion {
                path,
                found: version.trim().to_string(),
                expected: FORMAT_VERSION,
            });
        }
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let last = text.lines().count();
        Ok(Lines { path, lines, pos: 0, last })
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        let item = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(self.last + 1, "unexpected end of file"))?;
        self.pos += 1;
        Ok(item)
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.lines.get(self.pos).copied()
    }

    /// Next line split into words; the first must equal `key`.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next()?;
        let mut words = line.split_whitespace();
        if words.next() != Some(key) {
            return Err(self.err(n, format!("expected `{key}`")));
        }
        Ok((n, words.collect()))
    }

    fn floats(&self, n: usize, words: &[&str]) -> Result<Vec<f64>> {
        words
            .iter()
            .map(|w| w.parse::<f64>().map_err(|_| self.err(n, format!("invalid number `{w}`"))))
            .collect()
    }

    fn int<T: std::str::FromStr>(&self, n: usize, word: Option<&&str>) -> Result<T> {
        word.and_then(|w| w.parse().ok()).ok_or_else(|| self.err(n, "expected an integer"))
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").expect("writing to a String");
    }
    s
}

/// One record per line: 15 policy genes, landing x y, flight time, number
/// of clamped genes.
pub fn repertoire_to_string(rep: &Repertoire, prov: &Provenance) -> String {
    let m = &rep.meta;
    let mut s = prov.header("repertoire");
    writeln!(
        s,
        "meta generations={} evaluations={} seed={} arm_hash={:016x} entries={}",
        m.generations,
        m.evaluations,
        m.seed,
        m.arm_hash,
        rep.len()
    )
    .expect("writing to a String");
    for e in rep.entries() {
        let values = e.policy.to_vec().into_iter().chain(e.landing).chain([e.t_land]);
        writeln!(s, "{} {}", join(values), e.clamped_genes).expect("writing to a String");
    }
    s
}

pub fn repertoire_from_str(path: &Path, text: &str) -> Result<Repertoire> {
    let mut lines = Lines::open(path, text, "repertoire")?;
    let (n, words) = lines.keyed("meta")?;
    let field = |name: &str| -> Result<&str> {
        words
            .iter()
            .find_map(|w| w.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| lines.err(n, format!("missing `{name}`")))
    };
    let num = |name: &str| -> Result<u64> { field(name)?.parse().map_err(|_| lines.err(n, format!("invalid `{name}`"))) };
    let meta = RepertoireMeta {
        generations: num("generations")?,
        evaluations: num("evaluations")?,
        seed: num("seed")?,
        arm_hash: u64::from_str_radix(field("arm_hash")?, 16).map_err(|_| lines.err(n, "invalid `arm_hash`"))?,
    };
    let count = num("entries")? as usize;
    let mut entries = Vec::with_capacity(count);
    while let Some((n, line)) = lines.peek() {
        lines.pos += 1;
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.len() != 19 {
            return Err(lines.err(n, format!("expected 15 policy genes, 2 landing coordinates, flight time and clamp count; found {} fields", words.len())));
        }
        let v = lines.floats(n, &words[..18])?;
        let clamped_genes = lines.int(n, words.get(18))?;
        entries.push(RepertoireEntry {
            policy: Policy::from_slice(&v[..15]).map_err(|e| lines.err(n, e.to_string()))?,
            landing: [v[15], v[16]],
            t_land: v[17],
            clamped_genes,
        });
    }
    if entries.len() != count {
        return Err(lines.err(lines.last + 1, format!("expected {count} entries, found {}", entries.len())));
    }
    Ok(Repertoire::new(entries, meta))
}

pub fn save_repertoire(path: &Path, rep: &Repertoire, prov: &Provenance) -> Result<()> {
    write_file(path, &repertoire_to_string(rep, prov))
}

pub fn load_repertoire(path: &Path) -> Result<Repertoire> {
    repertoire_from_str(path, &read_file(path)?)
}

fn write_net(s: &mut String, name: &str, net: &DenseNet) {
    writeln!(s, "net {name} {}", net.layers().len()).expect("writing to a String");
    for l in net.layers() {
        writeln!(s, "layer {} {} {}", l.input, l.output, l.activation.name()).expect("writing to a String");
    }
    writeln!(s, "params {}", net.n_params()).expect("writing to a String");
    for chunk in net.params().chunks(8) {
        s.push_str(&join(chunk.iter().copied()));
        s.push('\n');
    }
}

fn read_net(lines: &mut Lines, name: &str) -> Result<DenseNet> {
    let (n, words) = lines.keyed("net")?;
    if words.first() != Some(&name) {
        return Err(lines.err(n, format!("expected network `{name}`")));
    }
    let count: usize = lines.int(n, words.get(1))?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, w) = lines.keyed("layer")?;
        let activation = w
            .get(2)
            .and_then(|a| Activation::from_name(a))
            .ok_or_else(|| lines.err(n, "unknown activation"))?;
        layers.push(LayerShape {
            input: lines.int(n, w.first())?,
            output: lines.int(n, w.get(1))?,
            activation,
        });
    }
    let (n, w) = lines.keyed("params")?;
    let total: usize = lines.int(n, w.first())?;
    let mut params = Vec::with_capacity(total);
    while params.len() < total {
        let (n, line) = lines.next()?;
        let words: Vec<&str> = line.split_whitespace().collect();
        params.extend(lines.floats(n, &words)?);
    }
    if params.len() != total {
        return Err(lines.err(n, format!("expected {total} parameters, found {}", params.len())));
    }
    DenseNet::from_parts(layers, params).map_err(|e| lines.err(n, e.to_string()))
}

/// Generator (with its normalization block) and optionally the
/// discriminator.
pub fn model_to_string(gen: &Generator, disc: Option<&Discriminator>, prov: &Provenance) -> String {
    let mut s = prov.header("model");
    write_net(&mut s, "generator", &gen.net);
    writeln!(s, "stats {}", gen.stats.dim()).expect("writing to a String");
    writeln!(s, "lo {}", join(gen.stats.lo.iter().copied())).expect("writing to a String");
    writeln!(s, "hi {}", join(gen.stats.hi.iter().copied())).expect("writing to a String");
    if let Some(d) = disc {
        write_net(&mut s, "discriminator", &d.net);
    }
    s.push_str("end\n");
    s
}

pub fn model_from_str(path: &Path, text: &str) -> Result<(Generator, Option<Discriminator>)> {
    let mut lines = Lines::open(path, text, "model")?;
    let net = read_net(&mut lines, "generator")?;
    let (n, w) = lines.keyed("stats")?;
    let dim: usize = lines.int(n, w.first())?;
    let (n, lo) = lines.keyed("lo")?;
    let lo = lines.floats(n, &lo)?;
    let (n2, hi) = lines.keyed("hi")?;
    let hi = lines.floats(n2, &hi)?;
    if lo.len() != dim || hi.len() != dim {
        return Err(lines.err(n, format!("normalization block must have {dim} values per row")));
    }
    let gen = Generator::from_parts(net, Normalizer { lo, hi }).map_err(|e| lines.err(n, e.to_string()))?;
    let disc = match lines.peek() {
        Some((_, l)) if l.starts_with("net ") => {
            let net = read_net(&mut lines, "discriminator")?;
            Some(Discriminator::from_net(net).map_err(|e| lines.err(n, e.to_string()))?)
        }
        _ => None,
    };
    let (n, _) = lines.keyed("end")?;
    if let Some((extra, _)) = lines.peek() {
        return Err(lines.err(extra.max(n), "trailing content after `end`"));
    }
    Ok((gen, disc))
}

pub fn save_model(path: &Path, gen: &Generator, disc: Option<&Discriminator>, prov: &Provenance) -> Result<()> {
    write_file(path, &model_to_string(gen, disc, prov))
}

pub fn load_model(path: &Path) -> Result<(Generator, Option<Discriminator>)> {
    model_from_str(path, &read_file(path)?)
}

/// Floor bounds followed by one `box` line of corner pairs per obstacle.
pub fn world_to_string(world: &ObstacleWorld, prov: &Provenance) -> String {
    let mut s = prov.header("world");
    let b = world.bounds();
    writeln!(s, "bounds {}", join(b.min.into_iter().chain(b.max))).expect("writing to a String");
    for bx in world.boxes() {
        writeln!(s, "box {}", join(bx.min.into_iter().chain(bx.max))).expect("writing to a String");
    }
    s
}

pub fn world_from_str(path: &Path, text: &str) -> Result<ObstacleWorld> {
    let mut lines = Lines::open(path, text, "world")?;
    let (n, w) = lines.keyed("bounds")?;
    let v = lines.floats(n, &w)?;
    if v.len() != 4 {
        return Err(lines.err(n, "bounds needs 4 numbers"));
    }
    let bounds = FloorBounds::new([v[0], v[1]], [v[2], v[3]]).map_err(|e| lines.err(n, e.to_string()))?;
    let mut boxes = Vec::new();
    while lines.peek().is_some() {
        let (n, w) = lines.keyed("box")?;
        let v = lines.floats(n, &w)?;
        if v.len() != 6 {
            return Err(lines.err(n, "box needs 6 numbers"));
        }
        boxes.push(Aabb::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]).map_err(|e| lines.err(n, e.to_string()))?);
    }
    ObstacleWorld::new(boxes, bounds).map_err(|e| lines.err(lines.last, e.to_string()))
}

#[derive(Serialize)]
struct EpisodeRecord<'a> {
    target: Option<[f64; 2]>,
    policy: Vec<f64>,
    landing: Option<[f64; 2]>,
    arm_collision: bool,
    ball_collision: bool,
    self_collision: bool,
    clamped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<&'a str>,
}

/// One JSON object per line.
pub fn episodes_to_jsonl<'a>(
    episodes: impl IntoIterator<Item = (Option<&'a str>, Option<[f64; 2]>, &'a Episode)>,
    prov: &Provenance,
) -> String {
    let mut s = prov.header("episodes");
    for (method, target, e) in episodes {
        let rec = EpisodeRecord {
            target,
            policy: e.policy.to_vec(),
            landing: e.landing_xy(),
            arm_collision: e.flags.arm_collision,
            ball_collision: e.flags.ball_collision,
            self_collision: e.flags.self_collision,
            clamped: e.flags.clamped,
            method,
        };
        s.push_str(&serde_json::to_string(&rec).expect("episode records serialize"));
        s.push('\n');
    }
    s
}

/// Tab-separated table with a column header row.
pub fn table_to_string(kind: &str, columns: &[&str], rows: &[Vec<String>], prov: &Provenance) -> String {
    let mut s = prov.header(kind);
    s.push_str(&columns.join("\t"));
    s.push('\n');
    for r in rows {
        s.push_str(&r.join("\t"));
        s.push('\n');
    }
    s
}

/// Whitespace-separated numeric matrix, one row per line, with an optional
/// comment describing the axes.
pub fn matrix_to_string<T: std::fmt::Display>(kind: &str, axes: &str, m: &[Vec<T>], prov: &Provenance) -> String {
    let mut s = prov.header(kind);
    writeln!(s, "# {axes}").expect("writing to a String");
    for row in m {
        let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

/// Landing counts on a `bins × bins` grid over the floor, rows along y.
/// Landings outside the floor are clamped into the border bins.
pub fn landing_histogram(rep: &Repertoire, bounds: &FloorBounds, bins: usize) -> Vec<Vec<u64>> {
    let mut h = vec![vec![0u64; bins]; bins];
    let idx = |v: f64, lo: f64, span: f64| (((v - lo) / span * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    for l in rep.landings() {
        let ix = idx(l[0], bounds.min[0], bounds.width());
        let iy = idx(l[1], bounds.min[1], bounds.depth());
        h[iy][ix] += 1;
    }
    h
}

pub fn training_log_to_string(log: &TrainingLog, prov: &Provenance) -> String {
    let rows: Vec<Vec<String>> = log
        .records
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.iteration.to_string(),
                r.d_loss.to_string(),
                r.g_adv_loss.to_string(),
                r.recon_loss.to_string(),
                r.recon_error_m.to_string(),
                r.d_accuracy.to_string(),
            ]
        })
        .collect();
    table_to_string(
        "training-log",
        &["epoch", "iteration", "d_loss", "g_adv_loss", "recon_loss", "recon_error_m", "d_accuracy"],
        &rows,
        prov,
    )
}

pub fn bayes_opt_history_to_string(state: &BayesOptState, prov: &Provenance) -> String {
    let mut columns = vec!["trial".to_string()];
    columns.extend((0..15).map(|i| format!("pi{i}")));
    columns.extend(["objective".into(), "collided".into()]);
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = state
        .history
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut r = vec![i.to_string()];
            r.extend(t.policy.to_vec().iter().map(ToString::to_string));
            r.push(t.objective.to_string());
            r.push(u8::from(t.collided).to_string());
            r
        })
        .collect();
    table_to_string("bayes-opt-history", &cols, &rows, prov)
}
