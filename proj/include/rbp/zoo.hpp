#pragma once

#include <cstddef>
#include <vector>

#include "rbp/model.hpp"

namespace rbp::zoo {

// conv(c1) - pool - conv(c2) - pool - fc(hidden) - fc(10) on 1x28x28 digits.
Architecture mnist_convnet(std::size_t c1 = 16, std::size_t c2 = 32, std::size_t hidden = 128);

// Two 1x1-conv stages followed by global pooling; used by the planted
// redundancy experiments where individual channels are switched off.
Architecture planted_net(std::size_t inputs, std::size_t width, std::size_t classes, std::size_t size);

// conv(c1) - relu - conv(c2) - relu - gap - fc(classes). Small enough for
// finite-difference checks in 64-bit.
Architecture two_conv_net(std::size_t in_channels, std::size_t c1, std::size_t c2, std::size_t classes,
                          std::size_t size);

// Thirteen 3x3 convs in five pooled blocks followed by `fc` hidden layers and a
// classifier. vgg16() is the ImageNet layout; vgg16_cifar() the reduced head
// (one 512-d hidden fc) used on 32x32 inputs.
Architecture vgg16(std::size_t resolution = 224, std::size_t classes = 1000,
                   std::vector<std::size_t> fc = {4096, 4096});
Architecture vgg16_cifar(std::size_t classes = 10);

// Bottleneck ResNet-50 (3-4-6-3 blocks, projection shortcuts).
Architecture resnet50(std::size_t resolution = 224, std::size_t classes = 1000);

struct BasicBlockPlan {
  std::size_t width;
  bool downsample;  // stride-2 first conv and 1x1 projection shortcut
};

// Stem conv3x3 - basic blocks - gap - fc. A block also gets a projection when
// its width differs from its input.
Architecture resnet_basic(std::size_t in_channels, std::size_t resolution, std::size_t stem_width,
                          const std::vector<BasicBlockPlan>& blocks, std::size_t classes);

// Three stages of `blocks_per_stage` basic blocks, widths doubling per stage.
Architecture resnet_toy(std::size_t base_width = 8, std::size_t blocks_per_stage = 2, std::size_t classes = 10,
                        std::size_t in_channels = 3, std::size_t resolution = 32);

struct BottleneckPlan {
  std::size_t mid, out;
  bool downsample;
};

// Stem conv3x3 - bottleneck blocks (1x1, 3x3, 1x1) - gap - fc. Projection
// shortcuts as in resnet_basic.
Architecture resnet_bottleneck(std::size_t in_channels, std::size_t resolution, std::size_t stem_width,
                               const std::vector<BottleneckPlan>& blocks, std::size_t classes);

// Four bottleneck blocks on 3x16x16 inputs; block 3 down-samples.
Architecture resnet_bottleneck_toy(std::size_t classes = 10);

}  // namespace rbp::zoo
