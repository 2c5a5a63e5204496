//! The chain-of-debunk pipeline on one item with mock agents: keywords,
//! per-modality captions, three verification runs, and the encoded F_c.

use difnd::cod::{encode_cod, run_cod, CapitalizedTagger, CodOptions};
use difnd::encoders::EncoderSet;
use difnd::llm::TranscriptLog;
use difnd::synth::{encoder_config, generate, MockAgents, SynthConfig};

fn main() -> anyhow::Result<()> {
    let synth = generate(&SynthConfig {
        items: 8,
        ..SynthConfig::default()
    })?;
    let item = &synth.corpus.items()[0];
    let agents = MockAgents::new(&synth.corpus, 0.8);
    let log = TranscriptLog::memory();
    let options = CodOptions::default();
    let encoders = EncoderSet::from_config(&encoder_config())?;

    for (vision, audio) in [(true, true), (false, false)] {
        let record = run_cod(item, &CapitalizedTagger, &agents.agents(vision, audio), &options, &log)?;
        println!("{} ({}), vision {vision}, audio {audio}", item.id, item.label.as_str());
        println!("  keywords: {}", record.keywords.joined());
        println!("  I_t: {}", record.text_analysis);
        println!("  I_v: {}", record.vision_caption);
        println!("  I_a: {}", record.audio_caption);
        for run in &record.runs {
            println!(
                "  verdict {}: {}",
                run.verdict.as_str(),
                run.rationale.lines().next().unwrap_or("")
            );
        }
        println!("  majority {}", record.majority().as_str());
        let f_c = encode_cod(&record, &encoders, options.runs)?;
        println!("  F_c {}x{}", f_c.rows(), f_c.dim());
    }
    for e in log.entries().iter().take(4) {
        println!("transcript {} {} {}", e.item_id, e.stage, &e.prompt_hash[..12]);
    }
    Ok(())
}
