//! Synthetic worlds for experiments and tests.
//!
//! The generator builds a clustered knowledge base whose hyperlink structure
//! carries the coherence signal: every cluster has hub pages linking to all
//! of its entities, so same-cluster candidates share inlink sets, and every
//! multi-candidate alias gets two hub pages of its own, so competing
//! candidates of one surface are mildly related. Documents mention entities
//! of a single cluster; separable mentions carry the gold title tokens in
//! their context window, while planted "flip" mentions are locally
//! ambiguous (higher-prior off-cluster rival, neutral context) and can only
//! be resolved by evidence propagated from the rest of the document.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{load_corpus_str, Corpus};
use crate::encoder::EmbeddingTable;
use crate::error::Result;
use crate::graph::TransitionMatrix;
use crate::kb::{load_kb_str, KnowledgeBase};
use crate::model::ModelParams;

/// Base-26 lowercase encoding, used so that surface strings and titles do
/// not leak digit patterns into the edit-distance feature.
fn letters(mut n: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}

const FILLER: [&str; 10] = [
    "the", "a", "of", "in", "was", "it", "and", "on", "for", "with",
];

#[derive(Debug, Clone)]
pub struct WorldSpec {
    pub clusters: usize,
    pub entities_per_cluster: usize,
    pub linkers_per_cluster: usize,
    pub train_docs: usize,
    pub val_docs: usize,
    /// Separable mentions per document (one unambiguous anchor is added on
    /// top of these).
    pub mentions_per_doc: usize,
    /// Distractor candidates per ambiguous alias.
    pub distractors: usize,
    /// Every n-th validation document carries a planted flip mention
    /// (0 disables them).
    pub flip_every: usize,
    /// Fraction of ambiguous aliases with uniform priors; their mentions are
    /// only solvable from context, which keeps phase-1 training from being
    /// a prior-table lookup.
    pub hard_fraction: f64,
    pub emb_dim: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            clusters: 8,
            entities_per_cluster: 5,
            linkers_per_cluster: 8,
            train_docs: 200,
            val_docs: 50,
            mentions_per_doc: 3,
            distractors: 4,
            flip_every: 7,
            hard_fraction: 0.4,
            emb_dim: 12,
            seed: 7,
        }
    }
}

/// Rendered world: line-delimited KB and corpora plus an embedding file.
#[derive(Debug, Clone)]
pub struct World {
    pub kb: String,
    pub train: String,
    pub val: String,
    pub embeddings: String,
}

pub struct WorldFiles {
    pub kb: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub embeddings: PathBuf,
}

impl World {
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<WorldFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let files = WorldFiles {
            kb: dir.join("kb.jsonl"),
            train: dir.join("train.jsonl"),
            val: dir.join("val.jsonl"),
            embeddings: dir.join("embeddings.txt"),
        };
        std::fs::write(&files.kb, &self.kb)?;
        std::fs::write(&files.train, &self.train)?;
        std::fs::write(&files.val, &self.val)?;
        std::fs::write(&files.embeddings, &self.embeddings)?;
        Ok(files)
    }

    pub fn load_kb(&self) -> Result<KnowledgeBase> {
        load_kb_str(&self.kb)
    }

    pub fn load_train(&self, kb: &KnowledgeBase) -> Result<Corpus> {
        load_corpus_str(&self.train, kb)
    }

    pub fn load_val(&self, kb: &KnowledgeBase) -> Result<Corpus> {
        load_corpus_str(&self.val, kb)
    }

    pub fn load_embeddings(&self, seed: u64) -> Result<EmbeddingTable> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vocab = Vec::new();
        for line in self.embeddings.lines().skip(1) {
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap().to_string();
            let row: Vec<f64> = fields.map(|f| f.parse().unwrap()).collect();
            vocab.push((token, row));
        }
        let dim = vocab[0].1.len();
        EmbeddingTable::new(vocab, dim, &mut rng)
    }
}

struct Entity {
    id: String,
    title: [String; 2],
    cluster: usize,
}

/// How the planted ambiguous mention relates to the rest of its document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FlipStyle {
    /// The flip gold is the same entity as the document's anchor mention, so
    /// streaming evidence reaches it after a single walk step.
    SharedAnchor,
    /// The flip gold is a different entity of the cluster, related to the
    /// anchor only through the hyperlink graph.
    Related,
}

struct Builder {
    spec: WorldSpec,
    rng: ChaCha8Rng,
    entities: Vec<Entity>,
    pages: Vec<String>,
    aliases: Vec<String>,
    vocab: BTreeSet<String>,
    /// Ambiguous alias surface per entity.
    mention_surface: Vec<String>,
    /// Anchor (canonical) alias surface per entity.
    anchor_surface: Vec<String>,
    /// Per cluster: flip alias surface, rival id, gold gid.
    flips: Vec<(String, String, usize)>,
    /// Per cluster: orphan entity id, its anchor surface, its flip surface.
    /// Orphans have topical pages but no inlinks at all, so only content
    /// similarity can route evidence to them.
    orphans: Vec<(String, String, String)>,
    alias_uid: usize,
}

impl Builder {
    fn new(spec: WorldSpec) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Self {
            spec,
            rng,
            entities: Vec::new(),
            pages: Vec::new(),
            aliases: Vec::new(),
            vocab: BTreeSet::new(),
            mention_surface: Vec::new(),
            anchor_surface: Vec::new(),
            flips: Vec::new(),
            orphans: Vec::new(),
            alias_uid: 0,
        }
    }

    fn add_tokens(&mut self, tokens: &[String]) {
        for t in tokens {
            self.vocab.insert(t.clone());
        }
    }

    fn page(&mut self, id: &str, title: &[String], body: &[String], outlinks: &[String]) {
        self.add_tokens(title);
        self.add_tokens(body);
        self.pages.push(
            json!({
                "type": "page",
                "id": id,
                "title": title.join(" "),
                "text": body.join(" "),
                "outlinks": outlinks,
            })
            .to_string(),
        );
    }

    fn alias(&mut self, surface: &str, candidates: &[(String, f64)], with_hubs: bool) {
        self.vocab.insert(surface.to_string());
        self.aliases.push(
            json!({
                "type": "alias",
                "surface": surface,
                "candidates": candidates.iter().map(|(id, p)| json!([id, p])).collect::<Vec<_>>(),
            })
            .to_string(),
        );
        if with_hubs {
            let ids: Vec<String> = candidates.iter().map(|(id, _)| id.clone()).collect();
            for h in 0..2 {
                let uid = self.alias_uid;
                let hub_id = format!("ah{uid}:{h}");
                let title = [format!("anchorhub{}", letters(uid * 2 + h))];
                let body = ["hub".to_string(), "page".to_string()];
                self.page(&hub_id, &title, &body, &ids);
            }
        }
        self.alias_uid += 1;
    }

    fn build_kb(&mut self) {
        let spec = self.spec.clone();
        // entities
        for c in 0..spec.clusters {
            let lc = letters(c);
            for i in 0..spec.entities_per_cluster {
                let gid = c * spec.entities_per_cluster + i;
                let id = format!("e{c}:{i}");
                let title = [format!("n{}", letters(gid)), format!("kind{lc}")];
                let body = vec![
                    format!("topic{lc}"),
                    format!("lore{lc}"),
                    title[0].clone(),
                    title[1].clone(),
                    "entry".to_string(),
                    "page".to_string(),
                ];
                self.page(&id, &title, &body, &[]);
                self.entities.push(Entity {
                    id,
                    title,
                    cluster: c,
                });
            }
        }
        // cluster hub linkers
        for c in 0..spec.clusters {
            let members: Vec<String> = (0..spec.entities_per_cluster)
                .map(|i| format!("e{c}:{i}"))
                .collect();
            for j in 0..spec.linkers_per_cluster {
                let id = format!("h{c}:{j}");
                let title = [format!("hub{}", letters(c * spec.linkers_per_cluster + j))];
                let body = ["hub".to_string(), "page".to_string()];
                self.page(&id, &title, &body, &members);
            }
        }
        // aliases
        for gid in 0..self.entities.len() {
            let id = self.entities[gid].id.clone();
            let anchor = format!("s{}", letters(gid));
            self.alias(&anchor, &[(id.clone(), 1.0)], false);
            self.anchor_surface.push(anchor);

            let surface = format!("m{}", letters(gid));
            let distractors = self.pick_distractors(gid, self.spec.distractors);
            let hard = self.rng.gen::<f64>() < self.spec.hard_fraction;
            let mut cands: Vec<(String, f64)> = Vec::new();
            if hard {
                // uniform priors: only the planted context distinguishes gold
                let p = 0.95 / (1.0 + distractors.len() as f64);
                cands.push((id.clone(), p));
                for d in &distractors {
                    cands.push((d.clone(), p));
                }
            } else {
                let priors = [0.40, 0.25, 0.15, 0.12, 0.08];
                cands.push((id.clone(), priors[0]));
                for (d, p) in distractors.iter().zip(&priors[1..]) {
                    cands.push((d.clone(), *p));
                }
            }
            self.alias(&surface, &cands, false);
            self.mention_surface.push(surface);
        }
        // flip aliases: a two-way surface whose higher-prior reading is an
        // off-cluster rival; only the hyperlink graph ties the lower-prior
        // gold to the rest of its documents
        for c in 0..spec.clusters {
            let gold_gid = c * spec.entities_per_cluster;
            let gold_id = self.entities[gold_gid].id.clone();
            let rival_gid = ((c + 1) % spec.clusters) * spec.entities_per_cluster + 1;
            let rival_id = self.entities[rival_gid].id.clone();
            let surface = format!("q{}", letters(c));
            let cands = vec![(rival_id.clone(), 0.50), (gold_id.clone(), 0.48)];
            self.alias(&surface, &cands, true);
            self.flips.push((surface, rival_id, gold_gid));
        }
        // orphan entities: topical pages without a single inlink, plus a
        // two-way alias against an ordinary off-cluster rival; no alias hubs,
        // so the hyperlink relatedness of every orphan pair is zero
        for c in 0..spec.clusters {
            let lc = letters(c);
            let id = format!("o{c}");
            let title = [format!("no{lc}"), format!("kind{lc}")];
            let body = vec![
                format!("topic{lc}"),
                format!("lore{lc}"),
                title[0].clone(),
                title[1].clone(),
                "entry".to_string(),
                "page".to_string(),
            ];
            self.page(&id, &title, &body, &[]);
            let anchor = format!("so{lc}");
            self.alias(&anchor, &[(id.clone(), 1.0)], false);
            let rival_gid = ((c + 1) % spec.clusters) * spec.entities_per_cluster
                + 2.min(spec.entities_per_cluster - 1);
            let rival_id = self.entities[rival_gid].id.clone();
            let flip = format!("qo{lc}");
            self.alias(&flip, &[(rival_id, 0.50), (id.clone(), 0.48)], false);
            self.orphans.push((id, anchor, flip));
        }
    }

    /// Filler for plain documents: common words plus the occasional flip
    /// surface, so flip surfaces also occur as ordinary words and their
    /// embeddings train toward cluster-neutral directions.
    fn plain_filler(&mut self) -> String {
        if !self.flips.is_empty() && self.rng.gen::<f64>() < 0.15 {
            let i = self.rng.gen_range(0..self.flips.len() + self.orphans.len());
            if i < self.flips.len() {
                self.flips[i].0.clone()
            } else {
                self.orphans[i - self.flips.len()].2.clone()
            }
        } else {
            FILLER[self.rng.gen_range(0..FILLER.len())].to_string()
        }
    }

    /// Distinct entities from clusters other than `gid`'s.
    fn pick_distractors(&mut self, gid: usize, count: usize) -> Vec<String> {
        let cluster = self.entities[gid].cluster;
        let pool: Vec<usize> = (0..self.entities.len())
            .filter(|&e| self.entities[e].cluster != cluster)
            .collect();
        let mut picked = BTreeSet::new();
        while picked.len() < count.min(pool.len()) {
            picked.insert(pool[self.rng.gen_range(0..pool.len())]);
        }
        picked
            .into_iter()
            .map(|e| self.entities[e].id.clone())
            .collect()
    }

    /// Render one document.
    ///
    /// Plain documents put separable mention groups first and the anchor
    /// mention at the very end, spaced beyond every context window; flip
    /// documents hold only the anchor and the ambiguous mention inside the
    /// first tokens, built from words that never occur in plain documents.
    /// With a document-prefix setting of 25 tokens this keeps every encoder
    /// input of a flip mention free of learned, cluster-identifying tokens.
    fn document(&mut self, doc_id: &str, cluster: usize, flip: Option<FlipStyle>) -> String {
        let e = self.spec.entities_per_cluster;
        // the flip alias's gold is always entity 0 of the cluster; a
        // shared-anchor flip reuses it as the anchor, a related flip anchors
        // on a sibling entity instead
        let anchor_gid = match flip {
            Some(FlipStyle::Related) => cluster * e + 1,
            _ => cluster * e,
        };
        let mut member_gids: Vec<usize> = (0..e)
            .map(|i| cluster * e + i)
            .filter(|&g| g != anchor_gid && g != cluster * e)
            .collect();
        member_gids.shuffle(&mut self.rng);

        let mut tokens: Vec<String> = Vec::new();
        let mut mentions: Vec<(usize, String)> = Vec::new(); // (token index, gold)

        if let Some(_style) = flip {
            // flip documents: anchor plus the ambiguous mention, nothing else,
            // so the rival's entire outflow is forced through the anchor's
            // candidate
            let (surface, _, flip_gold_gid) = self.flips[cluster].clone();
            let gold = self.entities[flip_gold_gid].id.clone();
            tokens.push("intro".into());
            mentions.push((1, self.entities[anchor_gid].id.clone()));
            tokens.push(self.anchor_surface[anchor_gid].clone());
            tokens.push("said".into());
            tokens.push("then".into());
            mentions.push((4, gold));
            tokens.push(surface);
            tokens.push("appeared".into());
            while tokens.len() < 25 {
                let f = FILLER[self.rng.gen_range(0..FILLER.len())];
                tokens.push(f.to_string());
            }
        } else {
            for _ in 0..3 {
                let f = self.plain_filler();
                tokens.push(f);
            }
            for &gid in member_gids.iter().take(self.spec.mentions_per_doc) {
                tokens.push("about".into());
                tokens.push(self.entities[gid].title[0].clone());
                tokens.push(self.entities[gid].title[1].clone());
                tokens.push("with".into());
                mentions.push((tokens.len(), self.entities[gid].id.clone()));
                tokens.push(self.mention_surface[gid].clone());
                for _ in 0..4 {
                    let f = self.plain_filler();
                    tokens.push(f);
                }
            }
            // trailing anchor, spaced outside every context window so its
            // surface embedding receives no training gradient
            for _ in 0..11 {
                let f = self.plain_filler();
                tokens.push(f);
            }
            tokens.push("by".into());
            mentions.push((tokens.len(), self.entities[anchor_gid].id.clone()));
            tokens.push(self.anchor_surface[anchor_gid].clone());
            tokens.push("out".into());
        }

        self.add_tokens(&tokens);
        self.render(doc_id, &tokens, &mentions)
    }

    /// A document holding an orphan-entity anchor and the matching ambiguous
    /// mention; only content similarity can save the lower-prior reading.
    fn orphan_document(&mut self, doc_id: &str, cluster: usize) -> String {
        let (entity, anchor, flip) = self.orphans[cluster].clone();
        let mut tokens: Vec<String> = vec![
            "intro".into(),
            anchor,
            "said".into(),
            "then".into(),
            flip,
            "appeared".into(),
        ];
        let mentions = vec![(1usize, entity.clone()), (4, entity)];
        while tokens.len() < 25 {
            let f = FILLER[self.rng.gen_range(0..FILLER.len())];
            tokens.push(f.to_string());
        }
        self.add_tokens(&tokens);
        self.render(doc_id, &tokens, &mentions)
    }

    fn render(&self, doc_id: &str, tokens: &[String], mentions: &[(usize, String)]) -> String {
        let mut offsets = Vec::with_capacity(tokens.len());
        let mut pos = 0usize;
        let mut text = String::new();
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                text.push(' ');
                pos += 1;
            }
            offsets.push((pos, pos + t.chars().count()));
            let _ = write!(text, "{t}");
            pos += t.chars().count();
        }
        let mention_objs: Vec<serde_json::Value> = mentions
            .iter()
            .map(|(ti, gold)| {
                let (s, t) = offsets[*ti];
                json!({"start": s, "end": t, "gold": gold})
            })
            .collect();
        json!({"doc_id": doc_id, "text": text, "mentions": mention_objs}).to_string()
    }

    fn embeddings(&mut self) -> String {
        let dim = self.spec.emb_dim;
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.vocab.len(), dim);
        let vocab: Vec<String> = self.vocab.iter().cloned().collect();
        for token in vocab {
            let _ = write!(out, "{token}");
            for _ in 0..dim {
                let v: f64 = self.rng.gen_range(-0.5..0.5);
                let _ = write!(out, " {v:.6}");
            }
            let _ = writeln!(out);
        }
        out
    }
}

/// Build the separable training world used by the end-to-end learning and
/// sweep experiments. Validation documents periodically carry a planted
/// shared-anchor flip mention; training documents never do.
pub fn separable_world(spec: &WorldSpec) -> World {
    let mut b = Builder::new(spec.clone());
    b.build_kb();
    // every document carries doc-local filler noise, so the corpora differ
    let mut train = String::new();
    for i in 0..b.spec.train_docs {
        let cluster = i % b.spec.clusters;
        let line = b.document(&format!("t{i}"), cluster, None);
        train.push_str(&line);
        train.push('\n');
    }
    let mut val = String::new();
    for i in 0..b.spec.val_docs {
        let cluster = i % b.spec.clusters;
        let flip = (b.spec.flip_every > 0 && i % b.spec.flip_every == 0)
            .then_some(FlipStyle::SharedAnchor);
        let line = b.document(&format!("v{i}"), cluster, flip);
        val.push_str(&line);
        val.push('\n');
    }
    let embeddings = b.embeddings();
    World {
        kb: b.pages.join("\n") + "\n" + &b.aliases.join("\n") + "\n",
        train,
        val,
        embeddings,
    }
}

/// Build the collective-flip world: a small separable training corpus plus
/// held-out flip documents. `flip0..flip2` pair an unambiguous anchor with a
/// locally-misleading mention whose gold is reachable through the hyperlink
/// graph; `orphan0..orphan1` plant the same trap on entities without any
/// inlinks, where only content similarity can help. All flip documents are
/// held out of training so nothing can memorize their surfaces.
pub fn flip_world(spec: &WorldSpec) -> World {
    let mut b = Builder::new(spec.clone());
    b.build_kb();
    let mut train = String::new();
    for i in 0..b.spec.train_docs {
        let cluster = i % b.spec.clusters;
        let line = b.document(&format!("t{i}"), cluster, None);
        train.push_str(&line);
        train.push('\n');
    }
    let mut val = String::new();
    for c in 0..3.min(b.spec.clusters) {
        val.push_str(&b.document(&format!("flip{c}"), c, Some(FlipStyle::Related)));
        val.push('\n');
    }
    for c in 0..2.min(b.spec.clusters) {
        val.push_str(&b.orphan_document(&format!("orphan{c}"), c));
        val.push('\n');
    }
    let embeddings = b.embeddings();
    World {
        kb: b.pages.join("\n") + "\n" + &b.aliases.join("\n") + "\n",
        train,
        val,
        embeddings,
    }
}

/// The rival and gold entity ids of the flip alias of `cluster`, as planted
/// by the generators (rival carries the higher prior).
pub fn flip_candidates(spec: &WorldSpec, cluster: usize) -> (String, String) {
    let e = spec.entities_per_cluster;
    let rival = format!("e{}:1", (cluster + 1) % spec.clusters);
    let _ = e;
    (rival, format!("e{cluster}:0"))
}

/// Tiny fully-deterministic instance for gradient checking: at most three
/// mentions and three candidates per mention, low-dimensional everything.
pub struct GradInstance {
    pub kb: KnowledgeBase,
    pub corpus: Corpus,
    pub params: ModelParams,
}

pub fn grad_check_instance(seed: u64) -> Result<GradInstance> {
    let spec = WorldSpec {
        clusters: 2,
        entities_per_cluster: 2,
        linkers_per_cluster: 2,
        train_docs: 2,
        val_docs: 0,
        mentions_per_doc: 2,
        distractors: 2,
        flip_every: 0,
        hard_fraction: 0.5,
        emb_dim: 6,
        seed,
    };
    let world = separable_world(&spec);
    let kb = world.load_kb()?;
    let corpus = world.load_train(&kb)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let embeddings = world.load_embeddings(seed)?;
    let mut params = ModelParams::init(embeddings, 3, 2, &mut rng);
    // move the scorer out of the near-zero init so every path carries
    // gradients well above finite-difference noise
    for f in &mut params.encoder.filters {
        *f *= 40.0;
    }
    for w in &mut params.w_local {
        *w *= 40.0;
    }
    Ok(GradInstance { kb, corpus, params })
}

/// A random document / KB / parameter triple for stochasticity testing.
pub struct RandomInstance {
    pub kb: KnowledgeBase,
    pub corpus: Corpus,
    pub params: ModelParams,
}

pub fn random_instance(seed: u64) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_entities = rng.gen_range(6..20);
    let ids: Vec<String> = (0..n_entities).map(|i| format!("x{}", letters(i))).collect();
    let mut kb_lines = String::new();
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    for (i, id) in ids.iter().enumerate() {
        let title = format!("t{}", letters(i));
        let body: Vec<String> = (0..rng.gen_range(1..6))
            .map(|_| format!("w{}", letters(rng.gen_range(0..30))))
            .collect();
        let n_links = rng.gen_range(0..4);
        let outlinks: Vec<String> = (0..n_links)
            .map(|_| ids[rng.gen_range(0..ids.len())].clone())
            .collect();
        vocab.insert(title.clone());
        for t in &body {
            vocab.insert(t.clone());
        }
        kb_lines.push_str(
            &json!({"type":"page","id":id,"title":title,"text":body.join(" "),"outlinks":outlinks})
                .to_string(),
        );
        kb_lines.push('\n');
    }
    let n_aliases = rng.gen_range(1..5);
    let mut surfaces = Vec::new();
    for a in 0..n_aliases {
        let surface = format!("al{}", letters(a));
        vocab.insert(surface.clone());
        let count = rng.gen_range(1..7).min(ids.len());
        let mut chosen = BTreeSet::new();
        while chosen.len() < count {
            chosen.insert(rng.gen_range(0..ids.len()));
        }
        let weights: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum::<f64>() * 1.05;
        let cands: Vec<(String, f64)> = chosen
            .iter()
            .zip(&weights)
            .map(|(&e, w)| (ids[e].clone(), w / total))
            .collect();
        kb_lines.push_str(
            &json!({"type":"alias","surface":surface,
                    "candidates": cands.iter().map(|(id,p)| json!([id,p])).collect::<Vec<_>>()})
            .to_string(),
        );
        kb_lines.push('\n');
        surfaces.push(surface);
    }
    let kb = load_kb_str(&kb_lines)?;

    // one document with 1..5 mentions over the alias surfaces
    let n_mentions = rng.gen_range(1..6);
    let mut tokens = Vec::new();
    let mut mention_pos = Vec::new();
    for _ in 0..n_mentions {
        for _ in 0..rng.gen_range(1..4) {
            tokens.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
        }
        mention_pos.push(tokens.len());
        tokens.push(surfaces[rng.gen_range(0..surfaces.len())].clone());
    }
    tokens.push("end".to_string());
    vocab.insert("end".to_string());
    for f in FILLER {
        vocab.insert(f.to_string());
    }
    let mut text = String::new();
    let mut offsets = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        offsets.push((text.chars().count(), text.chars().count() + t.chars().count()));
        text.push_str(t);
    }
    let mentions: Vec<serde_json::Value> = mention_pos
        .iter()
        .map(|&ti| json!({"start": offsets[ti].0, "end": offsets[ti].1, "gold": null}))
        .collect();
    let doc = json!({"doc_id":"r0","text":text,"mentions":mentions}).to_string();
    let corpus = load_corpus_str(&(doc + "\n"), &kb)?;

    let h = 6;
    let emb_vocab: Vec<(String, Vec<f64>)> = vocab
        .iter()
        .map(|t| {
            let row: Vec<f64> = (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect();
            (t.clone(), row)
        })
        .collect();
    let embeddings = EmbeddingTable::new(emb_vocab, h, &mut rng)?;
    let params = ModelParams::init(embeddings, 4, 3, &mut rng);
    Ok(RandomInstance { kb, corpus, params })
}

/// A random fully column-stochastic transition matrix (no dangling columns)
/// together with random restart columns, for oracle-equivalence testing.
pub fn random_walk_system(
    rng: &mut impl Rng,
    n: usize,
    columns: usize,
) -> (TransitionMatrix, Vec<Vec<f64>>) {
    let mut dense = vec![vec![0.0; n]; n];
    for (j, dense_col) in dense.iter_mut().enumerate() {
        let targets = rng.gen_range(1..=(n - 1).max(1));
        let mut chosen = BTreeSet::new();
        while chosen.len() < targets {
            let t = rng.gen_range(0..n);
            if t != j {
                chosen.insert(t);
            }
        }
        let weights: Vec<f64> = (0..chosen.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for (&i, w) in chosen.iter().zip(&weights) {
            dense_col[i] = w / total;
        }
    }
    let t = TransitionMatrix::from_dense_columns(&dense);
    let p0: Vec<Vec<f64>> = (0..columns)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|v| v / sum).collect()
        })
        .collect();
    (t, p0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_world_loads() {
        let spec = WorldSpec {
            train_docs: 6,
            val_docs: 4,
            flip_every: 2,
            ..WorldSpec::default()
        };
        let world = separable_world(&spec);
        let kb = world.load_kb().unwrap();
        assert!(kb.total_entities() > 0);
        let train = world.load_train(&kb).unwrap();
        assert_eq!(train.documents.len(), 6);
        // no dropped mentions: every surface has an alias
        assert_eq!(train.stats.dropped_mentions, 0);
        let val = world.load_val(&kb).unwrap();
        assert_eq!(val.documents.len(), 4);
        // flip docs hold exactly the anchor and the ambiguous mention
        assert_eq!(val.documents[0].mentions.len(), 2);
        assert!(val.documents[1].mentions.len() > 2);
    }

    #[test]
    fn world_is_deterministic() {
        let spec = WorldSpec {
            train_docs: 3,
            val_docs: 2,
            ..WorldSpec::default()
        };
        let w1 = separable_world(&spec);
        let w2 = separable_world(&spec);
        assert_eq!(w1.kb, w2.kb);
        assert_eq!(w1.train, w2.train);
        assert_eq!(w1.val, w2.val);
        assert_eq!(w1.embeddings, w2.embeddings);
    }

    #[test]
    fn cluster_members_share_inlinks() {
        let world = separable_world(&WorldSpec {
            train_docs: 1,
            val_docs: 1,
            ..WorldSpec::default()
        });
        let kb = world.load_kb().unwrap();
        // same cluster: hub sets overlap heavily
        let same = kb.sr_link("e0:1", "e0:2").unwrap();
        assert!(same > 0.5, "same-cluster relatedness {same}");
        // different clusters share no hubs
        let cross = kb.sr_link("e0:1", "e1:1").unwrap();
        assert!(cross < same, "cross {cross} vs same {same}");
    }

    #[test]
    fn flip_world_has_flip_docs() {
        let spec = WorldSpec {
            clusters: 4,
            train_docs: 8,
            val_docs: 0,
            ..WorldSpec::default()
        };
        let world = flip_world(&spec);
        let kb = world.load_kb().unwrap();
        let val = world.load_val(&kb).unwrap();
        // three link-driven flips plus two orphan flips
        assert_eq!(val.documents.len(), 5);
        for doc in &val.documents {
            assert_eq!(doc.mentions.len(), 2);
            // anchor is unambiguous, flip mention is not
            assert_eq!(doc.mentions[0].candidates.len(), 1);
            assert_eq!(doc.mentions[1].candidates.len(), 2);
            // rival outranks gold in priors
            let gold = doc.mentions[1].gold.clone().unwrap();
            assert_ne!(doc.mentions[1].candidates[0].0, gold);
            assert_eq!(doc.mentions[1].candidates[1].0, gold);
        }
        // orphan golds have no inlinks at all
        let orphan = val.documents.iter().find(|d| d.doc_id == "orphan0").unwrap();
        let orphan_gold = orphan.mentions[1].gold.clone().unwrap();
        assert_eq!(kb.inlink_count(&orphan_gold), 0);
    }

    #[test]
    fn grad_instance_is_tiny() {
        let inst = grad_check_instance(3).unwrap();
        for doc in &inst.corpus.documents {
            assert!(doc.mentions.len() <= 3);
            for m in &doc.mentions {
                assert!(m.candidates.len() <= 3);
            }
        }
        assert!(inst.params.embeddings.dim <= 8);
        assert!(inst.params.encoder.out_dim <= 4);
    }

    #[test]
    fn random_instances_vary_but_load() {
        for seed in 0..20 {
            let inst = random_instance(seed).unwrap();
            assert!(inst.kb.total_entities() >= 6);
            assert_eq!(inst.corpus.documents.len(), 1);
        }
    }

    #[test]
    fn random_walk_system_is_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, p0) = random_walk_system(&mut rng, 12, 3);
        for j in 0..12 {
            let s = t.column_sum(j);
            assert!((s - 1.0).abs() < 1e-9, "column {j} sums {s}");
        }
        for col in &p0 {
            assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
