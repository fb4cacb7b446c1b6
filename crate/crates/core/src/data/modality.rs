//! Motion and bone views of a joint sequence.

use super::{contract, SkeletonSequence, Topology};
use crate::tensor::Result;

/// Backward temporal difference; frame 0 is all zeros so the output keeps
/// the input's `T x J x 3` shape and label.
pub fn to_motion(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    if seq.num_frames < 2 {
        return Err(contract(
            "to_motion",
            format!("need at least 2 frames, got {}", seq.num_frames),
        ));
    }
    let stride = seq.num_joints * 3;
    let mut out = seq.zeros_like();
    for t in 1..seq.num_frames {
        for c in 0..stride {
            out.frames[t * stride + c] = seq.frames[t * stride + c] - seq.frames[(t - 1) * stride + c];
        }
    }
    Ok(out)
}

/// Child-minus-parent offsets over the kinematic tree; the root's bone is the
/// zero vector.
pub fn to_bone(seq: &SkeletonSequence, topo: &Topology) -> Result<SkeletonSequence> {
    if topo.joint_count() != seq.num_joints {
        return Err(contract(
            "to_bone",
            format!(
                "topology has {} joints, sequence has {}",
                topo.joint_count(),
                seq.num_joints
            ),
        ));
    }
    let mut out = seq.zeros_like();
    let stride = seq.num_joints * 3;
    for t in 0..seq.num_frames {
        for j in 0..seq.num_joints {
            let p = topo.parent()[j];
            if p < 0 {
                continue;
            }
            let p = p as usize;
            for d in 0..3 {
                out.frames[t * stride + j * 3 + d] =
                    seq.frames[t * stride + j * 3 + d] - seq.frames[t * stride + p * 3 + d];
            }
        }
    }
    Ok(out)
}
