//! Board and model descriptions shipped with the crate.

pub const ARRIA10: &str = include_str!("../data/fpga/arria10.json");
pub const STRATIX10: &str = include_str!("../data/fpga/stratix10.json");

pub const ALEXNET: &str = include_str!("../data/models/alexnet.json");
pub const RESNET50: &str = include_str!("../data/models/resnet50.json");
pub const RESNET152: &str = include_str!("../data/models/resnet152.json");
pub const TOY_ALEXNET: &str = include_str!("../data/models/toy_alexnet.json");
pub const TOY_RESNET: &str = include_str!("../data/models/toy_resnet.json");

/// Bundled model by name.
pub fn model(name: &str) -> Option<&'static str> {
    Some(match name {
        "alexnet" => ALEXNET,
        "resnet50" => RESNET50,
        "resnet152" => RESNET152,
        "toy_alexnet" => TOY_ALEXNET,
        "toy_resnet" => TOY_RESNET,
        _ => return None,
    })
}

/// Bundled board by name.
pub fn board(name: &str) -> Option<&'static str> {
    Some(match name {
        "arria10" => ARRIA10,
        "stratix10" => STRATIX10,
        _ => return None,
    })
}
