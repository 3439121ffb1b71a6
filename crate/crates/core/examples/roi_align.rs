//! Crop fixed-size features under boxes, including one that straddles the
//! map edge and a masked slot.

use swta::media::Box2;
use swta::model::{roi_align, RoiAlignConfig};
use swta::tensor::Tensor;

fn main() -> swta::Result<()> {
    let (h, w) = (8, 8);
    // A ramp makes each crop's mean track the box centre.
    let features = Tensor::from_fn(&[1, 1, h, w], |i| (i % w) as f32 + 10.0 * (i / w) as f32);
    let cfg = RoiAlignConfig {
        spatial_scale: 0.25,
        ..RoiAlignConfig::default()
    };
    let boxes = [
        Some(Box2::new(0.0, 0.0, 32.0, 32.0)),
        Some(Box2::new(8.0, 8.0, 16.0, 16.0)),
        Some(Box2::new(24.0, -4.0, 40.0, 12.0)),
        None,
    ];
    let crops = roi_align(&features, &boxes, &cfg)?;
    let bins = cfg.bins();
    for (slot, b) in boxes.iter().enumerate() {
        let crop = &crops.data()[slot * bins..(slot + 1) * bins];
        let mean = crop.iter().sum::<f32>() / bins as f32;
        println!("{b:?}: mean {mean:.3}, first row {:?}", &crop[..cfg.crop_width]);
    }
    Ok(())
}
