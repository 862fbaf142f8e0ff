use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in a local planar frame, meters (x east, y north).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Bounds {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    /// Rectangle anchored at the origin.
    pub fn from_size(width: f64, height: f64) -> Self {
        Bounds::new(0.0, 0.0, width, height)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    pub fn is_valid(&self) -> bool {
        [self.min_x, self.min_y, self.max_x, self.max_y]
            .iter()
            .all(|v| v.is_finite())
            && self.max_x > self.min_x
            && self.max_y > self.min_y
    }

    /// Closed containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    /// The middle cell of a 3 x 3 partition into equal rectangles.
    pub fn central_ninth(&self) -> Bounds {
        let w = self.width() / 3.0;
        let h = self.height() / 3.0;
        Bounds::new(
            self.min_x + w,
            self.min_y + h,
            self.min_x + 2.0 * w,
            self.min_y + 2.0 * h,
        )
    }
}

/// Unit vector of a heading given in degrees clockwise from north, as (east, north).
pub fn heading_unit(direction_deg: f64) -> (f64, f64) {
    let r = direction_deg.to_radians();
    (r.sin(), r.cos())
}

/// Heading of an (east, north) vector in degrees clockwise from north, in [0, 360).
/// The zero vector maps to 0.
pub fn heading_of(east: f64, north: f64) -> f64 {
    if east == 0.0 && north == 0.0 {
        return 0.0;
    }
    let deg = east.atan2(north).to_degrees();
    let wrapped = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 360.0 {
        0.0
    } else {
        wrapped
    }
}
