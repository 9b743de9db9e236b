use crate::feature_io::BinaryMask;

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// 8-connected components of the set pixels of `mask`.
///
/// Returns per-pixel labels (0 for background, components numbered from 1
/// in raster order of their first pixel) and the size of each component,
/// indexed by label − 1.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = (mask.height, mask.width);
    let mut provisional = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !mask.data[y * w + x] {
                continue;
            }
            let mut roots: Vec<u32> = Vec::with_capacity(4);
            let mut look = |yy: usize, xx: usize| {
                let l = provisional[yy * w + xx];
                if l != 0 {
                    roots.push(l);
                }
            };
            if x > 0 {
                look(y, x - 1);
            }
            if y > 0 {
                look(y - 1, x);
                if x > 0 {
                    look(y - 1, x - 1);
                }
                if x + 1 < w {
                    look(y - 1, x + 1);
                }
            }
            let label = match roots.iter().map(|&r| find(&mut parent, r)).min() {
                None => {
                    let l = parent.len() as u32;
                    parent.push(l);
                    l
                }
                Some(min) => {
                    for r in roots {
                        let root = find(&mut parent, r);
                        parent[root as usize] = min;
                    }
                    min
                }
            };
            provisional[y * w + x] = label;
        }
    }

    let mut remap = vec![0u32; parent.len()];
    let mut sizes = Vec::new();
    let mut labels = provisional;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = find(&mut parent, *l) as usize;
        if remap[root] == 0 {
            sizes.push(0);
            remap[root] = sizes.len() as u32;
        }
        *l = remap[root];
        sizes[*l as usize - 1] += 1;
    }
    (labels, sizes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(h, w, |y, x| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn diagonal_touch_joins() {
        let (labels, sizes) = label_components(&mask(&["#..", ".#.", "..#"]));
        assert_eq!(sizes, vec![3]);
        assert_eq!(labels, vec![1, 0, 0, 0, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn u_shape_merges_late() {
        let (labels, sizes) = label_components(&mask(&["#.#", "#.#", "###", "...", "##."]));
        assert_eq!(sizes, vec![7, 2]);
        assert_eq!(labels[0], labels[2]);
        assert_eq!(labels[12], 2);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let (labels, sizes) = label_components(&BinaryMask::empty(4, 4));
        assert!(sizes.is_empty());
        assert!(labels.iter().all(|&l| l == 0));
    }
}
