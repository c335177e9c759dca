//! Regenerates the bundled fixtures under `crates/cli/fixtures`.

use std::path::Path;

use starflow::toy::{write_cross_fixture, write_toy_fixture, CrossSpec};

fn main() -> starflow::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    write_cross_fixture(&root.join("cross"), &CrossSpec::default())?;
    write_toy_fixture(&root.join("toy"))?;
    println!("fixtures written to {}", root.display());
    Ok(())
}
