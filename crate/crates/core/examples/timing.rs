use std::time::Instant;
use drawl_core::victims::{load_victim, SpeakerEmbedding};
fn main() {
    let victim = load_victim(std::path::Path::new("/tmp/ar50.json")).unwrap();
    let text: Vec<char> = "Signal printing fox jumps timely lazy letter sample fox output.".chars().collect();
    let ids = victim.embedding().encode(&text).unwrap();
    // A speaker that never stops (drive to max steps) to get worst-case cost.
    for spk_seed in 0..200u64 {
        let s = SpeakerEmbedding::seeded(victim.d_spk(), spk_seed, "t");
        let eval = victim.evaluate(&ids, s.values(), 0.0).unwrap();
        if eval.steps_or_durations.len() == 2000 {
            let t0 = Instant::now();
            for _ in 0..50 { let _ = victim.evaluate(&ids, s.values(), 0.0).unwrap(); }
            let infer_ms = t0.elapsed().as_secs_f64() * 1e3 / 50.0;
            let t1 = Instant::now();
            for _ in 0..50 {
                let mut out = victim.forward(&ids, s.values(), 0.0).unwrap();
                let _ = out.grad_speaker().unwrap();
            }
            let fwd_bwd_ms = t1.elapsed().as_secs_f64() * 1e3 / 50.0;
            let t2 = Instant::now();
            for _ in 0..50 { let _ = victim.forward(&ids, s.values(), 0.0).unwrap(); }
            let fwd_ms = t2.elapsed().as_secs_f64() * 1e3 / 50.0;
            println!("2000-step: infer {infer_ms:.2} ms, graph fwd {fwd_ms:.2} ms, fwd+bwd {fwd_bwd_ms:.2} ms");
            break;
        }
    }
}
