//! Greedy decoding.

use crate::error::Result;
use crate::vocab::{TokenSeq, EOS};

use super::objective::SequenceScorer;

/// Greedily decodes up to `max_len` tokens after `prompt`. Each emitted token
/// is the argmax of the model's next-token distribution, with ties broken by
/// the lowest token id; generation stops at the end marker (which is not
/// emitted) or when the model cannot score a longer sequence. Always returns,
/// possibly with an empty sequence.
pub fn greedy_decode(model: &dyn SequenceScorer, prompt: &TokenSeq, max_len: usize) -> TokenSeq {
    let mut ids = prompt.ids().to_vec();
    let mut out = Vec::new();
    for _ in 0..max_len {
        let Ok(rows) = model.score_rows(&ids) else { break };
        let last = rows.row(rows.nrows() - 1);
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (j, &v) in last.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        if best as u32 == EOS {
            break;
        }
        out.push(best as u32);
        ids.push(best as u32);
    }
    TokenSeq::with_question_len(out, 0, model.vocab_size()).expect("argmax ids are in range")
}

/// Convenience wrapper returning the whitespace-joined decoded text.
pub fn greedy_decode_text(
    model: &dyn SequenceScorer,
    vocab: &crate::vocab::Vocab,
    prompt: &TokenSeq,
    max_len: usize,
) -> Result<String> {
    let seq = greedy_decode(model, prompt, max_len);
    vocab.decode(seq.ids())
}
