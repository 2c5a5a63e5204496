//! Feature extraction through the content-addressed cache. The second pass
//! reads every sequence back from disk and yields the same table.

use std::time::Instant;

use difnd::encoders::{EncoderSet, FeatureCache};
use difnd::features::{extract, ExtractOptions};
use difnd::synth::{encoder_config, generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let synth = generate(&SynthConfig {
        items: 100,
        ..SynthConfig::default()
    })?;
    let encoders = EncoderSet::from_config(&encoder_config())?;
    let dir = tempfile::tempdir()?;
    let cache = FeatureCache::new(dir.path());
    let options = ExtractOptions {
        cache: Some(&cache),
        ..ExtractOptions::default()
    };

    let t = Instant::now();
    let cold = extract(&synth.corpus, &encoders, &options)?;
    let cold_time = t.elapsed();
    let t = Instant::now();
    let warm = extract(&synth.corpus, &encoders, &options)?;
    println!("cold {cold_time:.1?}, warm {:.1?}", t.elapsed());
    println!("dims {:?}", cold.dims);
    let first = &cold.items()[0];
    println!("item {}: text {}x{}", first.id, first.text.rows(), first.text.dim());
    assert_eq!(bits(cold.items()[0].text.data()), bits(warm.items()[0].text.data()));
    for entry in std::fs::read_dir(dir.path())? {
        let entry = entry?;
        println!("  cache/{}", entry.file_name().to_string_lossy());
    }
    Ok(())
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}
