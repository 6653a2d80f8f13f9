use serde::{Deserialize, Serialize};

use crate::data::FeatureShape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputShape {
    Flat {
        features: usize,
    },
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat { features } => features,
            InputShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<FeatureShape> for InputShape {
    fn from(shape: FeatureShape) -> Self {
        match shape {
            FeatureShape::Image {
                height,
                width,
                channels,
            } => InputShape::Image {
                channels,
                height,
                width,
            },
            FeatureShape::Tabular { features } => InputShape::Flat { features },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

/// Residual-network stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stem {
    /// 7×7 stride-2 convolution, batch norm, ReLU, 3×3 stride-2 max pool.
    Imagenet,
    /// 3×3 stride-1 convolution, batch norm, ReLU; for small inputs.
    Compact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Architecture {
    /// Dense layers with ReLU between them.
    Mlp { hidden: Vec<usize> },
    /// `conv(k×k, same padding) → ReLU → maxpool 2×2` per entry of `channels`,
    /// then dense hidden layers.
    Conv {
        channels: Vec<usize>,
        kernel: usize,
        hidden: Vec<usize>,
    },
    /// Basic-block residual network; stage `i` has width `base_width·2^i`.
    Residual {
        stem: Stem,
        base_width: usize,
        blocks: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input: InputShape,
    pub num_classes: usize,
    pub role: Role,
}

pub(crate) fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

impl ModelSpec {
    pub fn mlp(input: InputShape, hidden: Vec<usize>, num_classes: usize, role: Role) -> Self {
        Self {
            architecture: Architecture::Mlp { hidden },
            input,
            num_classes,
            role,
        }
    }

    /// 784→512→256→C on 28×28 inputs.
    pub fn mlp_teacher(input: InputShape, num_classes: usize) -> Self {
        Self::mlp(input, vec![512, 256], num_classes, Role::Teacher)
    }

    /// 784→128→C on 28×28 inputs.
    pub fn mlp_student(input: InputShape, num_classes: usize) -> Self {
        Self::mlp(input, vec![128], num_classes, Role::Student)
    }

    pub fn conv_teacher(input: InputShape, num_classes: usize) -> Self {
        Self {
            architecture: Architecture::Conv {
                channels: vec![16, 32],
                kernel: 3,
                hidden: vec![128],
            },
            input,
            num_classes,
            role: Role::Teacher,
        }
    }

    pub fn conv_student(input: InputShape, num_classes: usize) -> Self {
        Self {
            architecture: Architecture::Conv {
                channels: vec![8],
                kernel: 3,
                hidden: vec![],
            },
            input,
            num_classes,
            role: Role::Student,
        }
    }

    /// Full-size 34-layer residual network on 224×224 RGB input.
    pub fn resnet34(num_classes: usize) -> Self {
        Self::residual(Stem::Imagenet, 64, vec![3, 4, 6, 3], imagenet_input(), num_classes, Role::Teacher)
    }

    /// Full-size 18-layer residual network on 224×224 RGB input.
    pub fn resnet18(num_classes: usize) -> Self {
        Self::residual(Stem::Imagenet, 64, vec![2, 2, 2, 2], imagenet_input(), num_classes, Role::Student)
    }

    pub fn residual(
        stem: Stem,
        base_width: usize,
        blocks: Vec<usize>,
        input: InputShape,
        num_classes: usize,
        role: Role,
    ) -> Self {
        Self {
            architecture: Architecture::Residual {
                stem,
                base_width,
                blocks,
            },
            input,
            num_classes,
            role,
        }
    }

    /// The teacher/student pairs shipped for a given input, by family name.
    pub fn shipped_pairs(input: InputShape, num_classes: usize) -> Vec<(&'static str, ModelSpec, ModelSpec)> {
        let mut pairs = vec![(
            "mlp",
            Self::mlp_teacher(input, num_classes),
            Self::mlp_student(input, num_classes),
        )];
        if matches!(input, InputShape::Image { .. }) {
            pairs.push((
                "conv",
                Self::conv_teacher(input, num_classes),
                Self::conv_student(input, num_classes),
            ));
            pairs.push((
                "residual",
                Self::residual(Stem::Compact, 8, vec![3, 4, 6, 3], input, num_classes, Role::Teacher),
                Self::residual(Stem::Compact, 8, vec![2, 2, 2, 2], input, num_classes, Role::Student),
            ));
        }
        pairs.push(("resnet-full", Self::resnet34(num_classes), Self::resnet18(num_classes)));
        pairs
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Construction("class count must be at least 1".into()));
        }
        if self.input.is_empty() {
            return Err(Error::Construction("input shape has no elements".into()));
        }
        match (&self.architecture, self.input) {
            (Architecture::Mlp { hidden }, _) => {
                if hidden.contains(&0) {
                    return Err(Error::Construction("zero-width hidden layer".into()));
                }
            }
            (Architecture::Conv { channels, kernel, hidden }, InputShape::Image { height, width, .. }) => {
                if *kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::Construction("conv kernel must be odd".into()));
                }
                if channels.contains(&0) || hidden.contains(&0) {
                    return Err(Error::Construction("zero-width layer".into()));
                }
                let (mut h, mut w) = (height, width);
                for _ in channels {
                    if h < 2 || w < 2 {
                        return Err(Error::Construction(format!(
                            "input {height}x{width} too small for {} pooling stages",
                            channels.len()
                        )));
                    }
                    h /= 2;
                    w /= 2;
                }
            }
            (Architecture::Residual { stem, base_width, blocks }, InputShape::Image { height, width, .. }) => {
                if *base_width == 0 || blocks.is_empty() || blocks.contains(&0) {
                    return Err(Error::Construction("residual spec needs nonzero widths and blocks".into()));
                }
                let min = match stem {
                    Stem::Imagenet => 4 << blocks.len(),
                    Stem::Compact => 1 << (blocks.len() - 1),
                };
                if height < min || width < min {
                    return Err(Error::Construction(format!(
                        "input {height}x{width} too small for this residual network"
                    )));
                }
            }
            (_, InputShape::Flat { .. }) => {
                return Err(Error::Construction(
                    "convolutional families need an image input shape".into(),
                ))
            }
        }
        Ok(())
    }
}

fn imagenet_input() -> InputShape {
    InputShape::Image {
        channels: 3,
        height: 224,
        width: 224,
    }
}
