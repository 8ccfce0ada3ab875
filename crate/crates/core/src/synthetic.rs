//! Synthetic structures and datasets for tests and demos.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contact::{build_contact_map, DEFAULT_THRESHOLD};
use crate::dataset::{Entry, ALPHABET};
use crate::pdb::{three_letter, ChainStructure, Residue};

const RISE_STRAND: f64 = 3.3;
const PLEAT: f64 = 0.9;
const STRAND_GAP: f64 = 5.0;

/// Backbone shapes used by the structure-only classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Helix,
    Strand,
    Hairpin,
    Meander,
}

impl Topology {
    pub const ALL: [Topology; 4] = [
        Topology::Helix,
        Topology::Strand,
        Topology::Hairpin,
        Topology::Meander,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Topology::Helix => "helix",
            Topology::Strand => "strand",
            Topology::Hairpin => "hairpin",
            Topology::Meander => "meander",
        }
    }
}

/// Ideal alpha helix: radius 2.3 Å, 1.5 Å rise, 100° per residue.
fn helix(len: usize) -> Vec<[f64; 3]> {
    (0..len)
        .map(|i| {
            let t = (100.0 * i as f64).to_radians();
            [2.3 * t.cos(), 2.3 * t.sin(), 1.5 * i as f64]
        })
        .collect()
}

/// Pleated strands laid side by side, alternating direction.
fn sheet(len: usize, strands: usize) -> Vec<[f64; 3]> {
    let per = len.div_ceil(strands);
    (0..len)
        .map(|i| {
            let (k, p) = (i / per, i % per);
            let along = if k % 2 == 0 { p } else { per - 1 - p };
            let z = if along % 2 == 0 { PLEAT } else { -PLEAT };
            [RISE_STRAND * along as f64, STRAND_GAP * k as f64, z]
        })
        .collect()
}

/// CA trace of `len` residues with uniform jitter of `jitter` Å per axis.
pub fn ca_trace<R: Rng + ?Sized>(
    topology: Topology,
    len: usize,
    jitter: f64,
    rng: &mut R,
) -> Vec<[f64; 3]> {
    let mut xyz = match topology {
        Topology::Helix => helix(len),
        Topology::Strand => sheet(len, 1),
        Topology::Hairpin => sheet(len, 2),
        Topology::Meander => sheet(len, 3),
    };
    if jitter > 0.0 {
        for p in &mut xyz {
            for c in p.iter_mut() {
                *c += rng.gen_range(-jitter..=jitter);
            }
        }
    }
    xyz
}

pub fn random_sequence<R: Rng + ?Sized>(len: usize, rng: &mut R) -> String {
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
        .collect()
}

/// Four classes whose labels depend only on backbone topology.
///
/// Every class draws lengths uniformly from `lengths` and residues uniformly
/// from the 20-letter alphabet, so sequences carry no class signal. Entries
/// are interleaved by class.
pub fn structure_signal_dataset(
    per_class: usize,
    lengths: (usize, usize),
    seed: u64,
) -> Vec<Entry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * Topology::ALL.len());
    for k in 0..per_class {
        for (label, topo) in Topology::ALL.iter().enumerate() {
            let len = rng.gen_range(lengths.0..=lengths.1);
            let xyz = ca_trace(*topo, len, 0.3, &mut rng);
            out.push(Entry {
                id: format!("{}_{k:04}", topo.name()),
                superfamily: topo.name().to_string(),
                sequence: random_sequence(len, &mut rng),
                contact_map: build_contact_map(&xyz, DEFAULT_THRESHOLD)
                    .expect("finite coordinates"),
                label,
            });
        }
    }
    out
}

/// `classes` classes separable by composition: class `c` draws its residues
/// from a disjoint slice of the alphabet.
pub fn composition_dataset(n: usize, classes: usize, len: usize, seed: u64) -> Vec<Entry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = ALPHABET.len() / classes;
    (0..n)
        .map(|i| {
            let label = i % classes;
            let pool = &ALPHABET[label * width..(label + 1) * width];
            let sequence: String = (0..len)
                .map(|_| pool[rng.gen_range(0..pool.len())] as char)
                .collect();
            let xyz = ca_trace(Topology::Helix, len, 0.3, &mut rng);
            Entry {
                id: format!("c{label}_{i:03}"),
                superfamily: format!("class{label}"),
                sequence,
                contact_map: build_contact_map(&xyz, DEFAULT_THRESHOLD)
                    .expect("finite coordinates"),
                label,
            }
        })
        .collect()
}

/// One file of the bundled test corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusFile {
    pub name: String,
    pub contents: String,
}

/// Expected prep outcome for one corpus entry: `None` when it is kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusExpectation {
    pub entry_id: String,
    pub rejection: Option<&'static str>,
}

fn chain(
    pdb_id: &str,
    topo: Topology,
    seq: &str,
    first: i32,
    rng: &mut ChaCha8Rng,
) -> ChainStructure {
    let xyz = ca_trace(topo, seq.len(), 0.3, rng);
    ChainStructure {
        pdb_id: pdb_id.to_string(),
        chain_id: 'A',
        residues: seq
            .chars()
            .zip(xyz)
            .enumerate()
            .map(|(i, (c, p))| Residue {
                seq_id: first + i as i32,
                insertion_code: ' ',
                name: three_letter(c).expect("standard residue").to_string(),
                ca_position: p,
            })
            .collect(),
        missing_ca: Vec::new(),
        hetero: Vec::new(),
    }
}

/// Twelve small PDB files plus an index: ten clean chains over two
/// superfamilies, one with a numbering gap and one with a selenomethionine
/// `HETATM` residue.
pub fn corpus(seed: u64) -> (Vec<CorpusFile>, String, Vec<CorpusExpectation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut files = Vec::new();
    let mut index = String::from("# entry_id\tpdb_path\tchain\tstart\tend\tsuperfamily\n");
    let mut expect = Vec::new();
    for k in 0..12 {
        let topo = [Topology::Helix, Topology::Hairpin][k % 2];
        let pdb_id = format!("{}S{:02}", k % 10, k);
        let len = rng.gen_range(14..=24);
        let seq = random_sequence(len, &mut rng);
        let mut ch = chain(&pdb_id, topo, &seq, 1, &mut rng);
        let mut text;
        let rejection = match k {
            10 => {
                // drop two residues from the middle of the chain
                ch.residues.drain(6..8);
                text = ch.to_pdb();
                Some("INCOMPLETE")
            }
            11 => {
                text = ch.to_pdb();
                let r = &ch.residues[5];
                let old = format!("ATOM  {:>5}  CA  {} A{:>4}", 6, r.name, r.seq_id);
                let new = format!("HETATM{:>5}  CA  MSE A{:>4}", 6, r.seq_id);
                text = text.replacen(&old, &new, 1);
                Some("NONSTANDARD")
            }
            _ => {
                text = ch.to_pdb();
                None
            }
        };
        let name = format!("{}.pdb", pdb_id.to_lowercase());
        let entry_id = format!("d{}a_", pdb_id.to_lowercase());
        let _ = writeln!(index, "{entry_id}\t{name}\tA\t-\t-\tsf.{}", topo.name());
        files.push(CorpusFile {
            name,
            contents: text,
        });
        expect.push(CorpusExpectation {
            entry_id,
            rejection,
        });
    }
    (files, index, expect)
}
