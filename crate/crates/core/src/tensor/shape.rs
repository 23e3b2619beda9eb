use super::MAX_RANK;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Trailing-dimension broadcast: extents are aligned from the right and an
/// extent of 1 stretches to match the other operand.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (ea, eb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Row-major strides of `shape` right-aligned into `MAX_RANK` slots of
/// `out_shape`, with zero stride on every broadcast (stretched) axis.
pub(crate) fn padded_strides(shape: &[usize], out_shape: &[usize]) -> [usize; MAX_RANK] {
    let mut strides = [0; MAX_RANK];
    let offset = MAX_RANK - shape.len();
    let out_offset = MAX_RANK - out_shape.len();
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let slot = offset + i;
        let out_extent = if slot >= out_offset { out_shape[slot - out_offset] } else { 1 };
        strides[slot] = if shape[i] == 1 && out_extent != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn padded_shape(shape: &[usize]) -> [usize; MAX_RANK] {
    let mut out = [1; MAX_RANK];
    out[MAX_RANK - shape.len()..].copy_from_slice(shape);
    out
}

/// Calls `f(out_index, a_offset, b_offset)` for every element of `out_shape`
/// in row-major order.
#[inline]
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    a: [usize; MAX_RANK],
    b: [usize; MAX_RANK],
    mut f: impl FnMut(usize, usize, usize),
) {
    let [d0, d1, d2, d3] = padded_shape(out_shape);
    let mut o = 0;
    for i0 in 0..d0 {
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let ab = i0 * a[0] + i1 * a[1] + i2 * a[2];
                let bb = i0 * b[0] + i1 * b[1] + i2 * b[2];
                for i3 in 0..d3 {
                    f(o, ab + i3 * a[3], bb + i3 * b[3]);
                    o += 1;
                }
            }
        }
    }
}

/// Sums `grad` (shaped `out_shape`) over the axes that were stretched when
/// broadcasting `in_shape` up to `out_shape`.
pub(crate) fn sum_to_shape<T: crate::Scalar>(
    grad: &[T],
    out_shape: &[usize],
    in_shape: &[usize],
) -> Vec<T> {
    if out_shape == in_shape {
        return grad.to_vec();
    }
    let mut acc = vec![T::zero(); numel(in_shape)];
    let strides = padded_strides(in_shape, out_shape);
    for_each_broadcast(out_shape, strides, [0; MAX_RANK], |o, i, _| {
        acc[i] = acc[i] + grad[o];
    });
    acc
}
