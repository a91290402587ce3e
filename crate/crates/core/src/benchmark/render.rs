use crate::model_server::Image;

pub const IMAGE_SIZE: usize = 64;

const BACKGROUND: [u8; 3] = [32, 32, 32];
const GOAL: [u8; 3] = [220, 40, 40];
const AGENT: [u8; 3] = [40, 200, 80];

fn to_pixel(coord: f64) -> usize {
    let unit = ((coord.clamp(-1.0, 1.0) + 1.0) / 2.0) * (IMAGE_SIZE - 1) as f64;
    unit.round() as usize
}

fn square(img: &mut Image, x: f64, y: f64, half: usize, rgb: [u8; 3]) {
    let (c, r) = (to_pixel(x), to_pixel(-y));
    for row in r.saturating_sub(half)..=(r + half).min(IMAGE_SIZE - 1) {
        for col in c.saturating_sub(half)..=(c + half).min(IMAGE_SIZE - 1) {
            img.put(row, col, rgb);
        }
    }
}

/// Top-down view: goal as a red 5×5 square, agent as a green 3×3 square
/// drawn on top. `y` grows upward.
pub fn render_scene(agent: [f64; 3], goal: Option<[f64; 3]>) -> Image {
    let mut img = Image::new(IMAGE_SIZE, IMAGE_SIZE, BACKGROUND);
    if let Some(g) = goal {
        square(&mut img, g[0], g[1], 2, GOAL);
    }
    square(&mut img, agent[0], agent[1], 1, AGENT);
    img
}
