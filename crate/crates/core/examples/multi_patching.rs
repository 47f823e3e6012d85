//! Cut a history into patches of several sizes and undo it.
//!
//!     cargo run --example multi_patching

use candle_core::{Device, Tensor};
use patchlink::features::FeatureBundle;
use patchlink::patching::{patch, unpatch, PatchPlan};

fn main() -> patchlink::Result<()> {
    let len = 11;
    let seq = |d: usize| Tensor::arange(0f32, (len * d) as f32, &Device::Cpu)?.reshape((len, d));
    let bundle = FeatureBundle {
        node: seq(1)?,
        edge: seq(1)?,
        pos: seq(2)?,
        occ: seq(3)?,
        int: seq(2)?,
        length: len,
    };
    let plan = PatchPlan::new(vec![2, 4, 8], 32)?;
    let patched = patch(&bundle, &plan)?;
    for g in &patched.groups {
        println!("S = {}: {} patches, node patch width {}", g.size, g.num_patches, g.node.dims()[1]);
    }
    // the last patch of each size is zero-padded
    println!("last S=4 node patch: {:?}", patched.group(4).unwrap().node.get(2)?.to_vec1::<f32>()?);

    let back = unpatch(&patched, 8)?;
    let same = back.occ.eq(&bundle.occ)?.min_all()?.to_scalar::<u8>()? == 1;
    println!("unpatch(patch(x)) == x: {same}");
    Ok(())
}
