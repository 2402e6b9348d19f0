//! Synthetic bags written as FBAG files with a CSV manifest, read back, and
//! fingerprinted.

use mamba2mil::data::{
    class_counts, dataset_digest, generate_synthetic, load_bags, save_bags, SyntheticSpec,
};

fn main() -> mamba2mil::Result<()> {
    let spec = SyntheticSpec {
        num_bags: 12,
        dim: 16,
        min_size: 5,
        max_size: 20,
        ..SyntheticSpec::default()
    };
    let bags = generate_synthetic(&spec)?;
    let dir = std::env::temp_dir().join(format!("m2mil-bags-{}", std::process::id()));
    let manifest = save_bags(&bags, &dir)?;
    let loaded = load_bags(&manifest)?;
    assert_eq!(loaded, bags);
    println!(
        "{} bags round-tripped through {}",
        loaded.len(),
        manifest.display()
    );
    println!("class counts {:?}", class_counts(&loaded));
    println!(
        "sizes {:?}",
        loaded.iter().map(|b| b.len()).collect::<Vec<_>>()
    );
    println!("digest {}", dataset_digest(&manifest)?);
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
