use super::{BoundConv, BoundParams, ModelError};
use crate::autodiff::{Tape, Var};

fn conv_relu(tape: &mut Tape, x: Var, c: &BoundConv) -> Result<Var, ModelError> {
    let y = tape.conv2d(x, c.kernel, c.bias, 1, 1)?;
    Ok(tape.relu(y))
}

fn block(tape: &mut Tape, x: Var, convs: &[BoundConv; 2]) -> Result<Var, ModelError> {
    let y = conv_relu(tape, x, &convs[0])?;
    conv_relu(tape, y, &convs[1])
}

/// Two-level U-Net body `F`: returns the raw `d`-channel proposal at full
/// resolution.
///
/// Upsampled features precede the skip connection in each decoder concat.
pub fn unet_forward(tape: &mut Tape, p: &BoundParams, input: Var) -> Result<Var, ModelError> {
    let (_, c, h, w) = tape.value(input).dims4()?;
    let cfg = &p.config;
    if c != cfg.in_channels() {
        return Err(ModelError::Config(format!(
            "body expects {} input channels, got {c}",
            cfg.in_channels()
        )));
    }
    if h % 4 != 0 || w % 4 != 0 {
        return Err(ModelError::Config(format!(
            "spatial size {h}x{w} is not divisible by 4"
        )));
    }
    let e1 = block(tape, input, &p.enc1)?;
    let p1 = tape.maxpool2(e1)?;
    let e2 = block(tape, p1, &p.enc2)?;
    let p2 = tape.maxpool2(e2)?;
    let b = block(tape, p2, &p.bottleneck)?;
    let u2 = tape.upsample2(b)?;
    let c2 = tape.concat_channels(u2, e2)?;
    let d2 = block(tape, c2, &p.dec2)?;
    let u1 = tape.upsample2(d2)?;
    let c1 = tape.concat_channels(u1, e1)?;
    let d1 = block(tape, c1, &p.dec1)?;
    Ok(tape.conv2d(d1, p.out.kernel, p.out.bias, 1, 0)?)
}
