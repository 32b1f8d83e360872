use std::fmt;

/// Number of segmentation classes, background included.
pub const NUM_CLASSES: usize = 4;

/// Segmentation classes with their on-disk ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Background = 0,
    Car = 1,
    Pedestrian = 2,
    Cyclist = 3,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [
        Class::Background,
        Class::Car,
        Class::Pedestrian,
        Class::Cyclist,
    ];

    /// Classes that enter the reported average IoU.
    pub const OBJECTS: [Class; 3] = [Class::Car, Class::Pedestrian, Class::Cyclist];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Class> {
        Class::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Background => "background",
            Class::Car => "car",
            Class::Pedestrian => "pedestrian",
            Class::Cyclist => "cyclist",
        }
    }

    /// Render colour: blue cars, red cyclists, lime pedestrians, gray background.
    pub fn color(self) -> [u8; 3] {
        match self {
            Class::Background => [128, 128, 128],
            Class::Car => [0, 0, 255],
            Class::Pedestrian => [0, 255, 0],
            Class::Cyclist => [255, 0, 0],
        }
    }
}

/// Colour of pixels without a return.
pub const INVALID_COLOR: [u8; 3] = [0, 0, 0];

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
