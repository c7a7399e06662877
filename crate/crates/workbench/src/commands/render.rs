//! Frame files to PNG.

use flowlenia::{Field, FrameEncoding, FrameMessage, MultiField};
use image::{imageops, RgbImage};

use crate::cli::RenderArgs;
use crate::error::{Result, WorkbenchError};

/// RGB image of a frame: raw frames are composited (grey for one channel,
/// channel `c` to colour component `c` otherwise), RGB frames are copied.
pub fn frame_image(frame: &FrameMessage, channel: Option<usize>, scale: u32) -> Result<RgbImage> {
    let rgb = match frame.encoding {
        FrameEncoding::Rgb8 => frame.clone(),
        FrameEncoding::RawF32 => {
            let planes: Vec<usize> = match channel {
                Some(c) => vec![c],
                None => (0..frame.channels).collect(),
            };
            let fields = planes
                .into_iter()
                .map(|c| Field::from_vec(frame.width, frame.height, frame.plane(c)?))
                .collect::<flowlenia::Result<Vec<_>>>()?;
            FrameMessage::composite(frame.step, &MultiField::new(fields)?, None)
        }
    };
    let img = RgbImage::from_raw(rgb.width as u32, rgb.height as u32, rgb.payload)
        .ok_or_else(|| WorkbenchError::Usage("frame payload does not match its size".into()))?;
    Ok(if scale > 1 {
        imageops::resize(&img, img.width() * scale, img.height() * scale, imageops::FilterType::Nearest)
    } else {
        img
    })
}

pub fn run(args: &RenderArgs) -> Result<()> {
    let frame = FrameMessage::read_files(&args.frame)?;
    frame_image(&frame, args.channel, args.scale)?.save(&args.out)?;
    Ok(())
}
