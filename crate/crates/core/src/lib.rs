pub fn v() -> u32 { 1 }
