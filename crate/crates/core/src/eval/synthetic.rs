//! Small generated datasets for exercising the protocols at desk scale.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Caption and item vectors that are noisy linear images of a shared latent code.
pub fn aligned_pairs(
    n: usize,
    latent: usize,
    caption_dim: usize,
    item_dim: usize,
    noise: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let a: Vec<f64> = (0..caption_dim * latent).map(|_| gauss(&mut rng)).collect();
    let b: Vec<f64> = (0..item_dim * latent).map(|_| gauss(&mut rng)).collect();
    let mut captions = Vec::with_capacity(n);
    let mut items = Vec::with_capacity(n);
    for _ in 0..n {
        let u: Vec<f64> = (0..latent).map(|_| gauss(&mut rng)).collect();
        let map = |m: &[f64], dim: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim)
                .map(|r| {
                    let clean: f64 = (0..latent).map(|j| m[r * latent + j] * u[j]).sum();
                    clean + noise * gauss(rng)
                })
                .collect()
        };
        captions.push(map(&a, caption_dim, &mut rng));
        items.push(map(&b, item_dim, &mut rng));
    }
    (captions, items)
}

/// `subject verb object .` sentences.
#[derive(Clone, Debug)]
pub struct TemplateGrammar {
    pub subjects: Vec<&'static str>,
    pub verbs: Vec<&'static str>,
    pub objects: Vec<&'static str>,
}

impl Default for TemplateGrammar {
    fn default() -> Self {
        Self {
            subjects: vec!["i", "you", "he", "she", "we", "they"],
            verbs: vec!["needed", "got", "saw", "liked", "hated", "helped", "blamed", "hurt"],
            objects: vec!["me", "him", "her", "us", "them", "it"],
        }
    }
}

impl TemplateGrammar {
    pub fn sentence(&self, s: usize, v: usize, o: usize) -> Vec<String> {
        vec![
            self.subjects[s].to_string(),
            self.verbs[v].to_string(),
            self.objects[o].to_string(),
            ".".to_string(),
        ]
    }

    /// Every `(subject, verb, object)` triple.
    pub fn slots(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for s in 0..self.subjects.len() {
            for v in 0..self.verbs.len() {
                for o in 0..self.objects.len() {
                    out.push((s, v, o));
                }
            }
        }
        out
    }

    /// All sentences as a corpus text, one paragraph per subject.
    pub fn corpus_text(&self) -> String {
        let mut out = String::new();
        for s in 0..self.subjects.len() {
            for v in 0..self.verbs.len() {
                for o in 0..self.objects.len() {
                    out.push_str(&self.sentence(s, v, o).join(" "));
                    out.push('\n');
                }
            }
            out.push('\n');
        }
        out
    }

    /// Labels a sentence by whether its verb lies in the first half of the verb list.
    pub fn verb_class(&self, v: usize) -> usize {
        usize::from(v >= self.verbs.len() / 2)
    }

    /// All sentences except `excluded`, one paragraph per subject.
    pub fn corpus_text_excluding(&self, excluded: &[(usize, usize, usize)]) -> String {
        let mut out = String::new();
        for s in 0..self.subjects.len() {
            for v in 0..self.verbs.len() {
                for o in 0..self.objects.len() {
                    if !excluded.contains(&(s, v, o)) {
                        out.push_str(&self.sentence(s, v, o).join(" "));
                        out.push('\n');
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Slot-swap probes `[a, b, c, expected]` with `a = (s1, v1, o1)`,
    /// `b = (s1, v2, o1)`, `c = (s2, v2, o2)` and `expected = (s2, v1, o2)`.
    /// Expected sentences are distinct and never coincide with an `a`, `b` or `c`.
    pub fn arithmetic_probes(&self, n: usize, seed: u64) -> Vec<[(usize, usize, usize); 4]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ns, nv, no) = (self.subjects.len(), self.verbs.len(), self.objects.len());
        let mut probes: Vec<[(usize, usize, usize); 4]> = Vec::with_capacity(n);
        let mut attempts = 0;
        while probes.len() < n && attempts < 100 * n {
            attempts += 1;
            let (s1, s2) = (rng.random_range(0..ns), rng.random_range(0..ns));
            let (v1, v2) = (rng.random_range(0..nv), rng.random_range(0..nv));
            let (o1, o2) = (rng.random_range(0..no), rng.random_range(0..no));
            if s1 == s2 || v1 == v2 || o1 == o2 {
                continue;
            }
            let probe = [(s1, v1, o1), (s1, v2, o1), (s2, v2, o2), (s2, v1, o2)];
            let clashes = probes.iter().any(|p| {
                p[3] == probe[3] || p[..3].contains(&probe[3]) || probe[..3].contains(&p[3])
            });
            if !clashes {
                probes.push(probe);
            }
        }
        probes
    }

    /// Two-sentence paragraphs whose second sentence depends only on the verb class.
    pub fn transfer_corpus_text(&self) -> String {
        let mut out = String::new();
        for (s, v, o) in self.slots() {
            let mood = if self.verb_class(v) == 0 { "good" } else { "bad" };
            out.push_str(&self.sentence(s, v, o).join(" "));
            out.push_str(&format!("\nit was {mood} .\n\n"));
        }
        out
    }

    /// Verb-class sentences split so that train and test share no verb. Each
    /// class keeps half its verbs for training.
    pub fn held_out_verb_task(&self) -> (Vec<Vec<String>>, Vec<usize>, Vec<usize>, Vec<usize>) {
        let half = self.verbs.len() / 2;
        let (mut sentences, mut labels, mut train, mut test) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, (s, v, o)) in self.slots().into_iter().enumerate() {
            sentences.push(self.sentence(s, v, o));
            labels.push(self.verb_class(v));
            if (v % half) < half.div_ceil(2) {
                train.push(i);
            } else {
                test.push(i);
            }
        }
        (sentences, labels, train, test)
    }

    /// Shuffled labeled sentences for the two-class verb task.
    pub fn labeled(&self, seed: u64) -> (Vec<Vec<String>>, Vec<usize>) {
        let mut slots = self.slots();
        slots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let sentences = slots.iter().map(|&(s, v, o)| self.sentence(s, v, o)).collect();
        let labels = slots.iter().map(|&(_, v, _)| self.verb_class(v)).collect();
        (sentences, labels)
    }
}
