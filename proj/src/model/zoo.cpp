#include "rbp/zoo.hpp"

#include <string>

namespace rbp::zoo {

Architecture mnist_convnet(std::size_t c1, std::size_t c2, std::size_t hidden) {
  Architecture a;
  a.name = "mnist_convnet";
  a.channels = 1;
  a.height = a.width = 28;
  a.classes = 10;
  a.layers = {conv_layer("conv1", 1, c1, 3, 1, 1),
              relu_layer(),
              max_pool_layer(2, 2),
              conv_layer("conv2", c1, c2, 3, 1, 1),
              relu_layer(),
              max_pool_layer(2, 2),
              flatten_layer(),
              linear_layer("fc1", c2 * 7 * 7, hidden),
              relu_layer(),
              linear_layer("fc2", hidden, 10)};
  return a;
}

Architecture planted_net(std::size_t inputs, std::size_t width, std::size_t classes, std::size_t size) {
  Architecture a;
  a.name = "planted_net";
  a.channels = inputs;
  a.height = a.width = size;
  a.classes = classes;
  a.layers = {conv_layer("conv1", inputs, width, 1),
              relu_layer(),
              conv_layer("conv2", width, width, 1),
              relu_layer(),
              global_avg_pool_layer(),
              flatten_layer(),
              linear_layer("fc", width, classes, true)};
  return a;
}

Architecture two_conv_net(std::size_t in_channels, std::size_t c1, std::size_t c2, std::size_t classes,
                          std::size_t size) {
  Architecture a;
  a.name = "two_conv_net";
  a.channels = in_channels;
  a.height = a.width = size;
  a.classes = classes;
  a.layers = {conv_layer("conv1", in_channels, c1, 3, 1, 1),
              relu_layer(),
              conv_layer("conv2", c1, c2, 3, 1, 1),
              relu_layer(),
              global_avg_pool_layer(),
              flatten_layer(),
              linear_layer("fc", c2, classes)};
  return a;
}

namespace {

void add_vgg_trunk(Architecture& a) {
  const std::vector<std::vector<std::size_t>> blocks = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  std::size_t in = a.channels;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < blocks[b].size(); ++i) {
      a.layers.push_back(conv_layer("conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1), in, blocks[b][i], 3, 1, 1));
      a.layers.push_back(relu_layer());
      in = blocks[b][i];
    }
    a.layers.push_back(max_pool_layer(2, 2));
  }
}

}  // namespace

Architecture vgg16(std::size_t resolution, std::size_t classes, std::vector<std::size_t> fc) {
  Architecture a;
  a.name = "vgg16";
  a.channels = 3;
  a.height = a.width = resolution;
  a.classes = classes;
  add_vgg_trunk(a);
  a.layers.push_back(flatten_layer());
  const std::size_t side = resolution / 32;
  std::size_t in = 512 * side * side;
  for (std::size_t i = 0; i < fc.size(); ++i) {
    a.layers.push_back(linear_layer("fc" + std::to_string(i + 1), in, fc[i], true));
    a.layers.push_back(relu_layer());
    in = fc[i];
  }
  a.layers.push_back(linear_layer("fc" + std::to_string(fc.size() + 1), in, classes, true));
  return a;
}

Architecture vgg16_cifar(std::size_t classes) {
  Architecture a = vgg16(32, classes, {512});
  a.name = "vgg16_cifar";
  return a;
}

Architecture resnet50(std::size_t resolution, std::size_t classes) {
  Architecture a;
  a.name = "resnet50";
  a.channels = 3;
  a.height = a.width = resolution;
  a.classes = classes;
  a.layers = {conv_layer("conv1", 3, 64, 7, 2, 3), relu_layer(), max_pool_layer(3, 2, 1)};
  const std::size_t counts[] = {3, 4, 6, 3};
  std::size_t in = 64;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t mid = 64u << stage, out = mid * 4;
    for (std::size_t b = 0; b < counts[stage]; ++b) {
      const std::string id = "res" + std::to_string(stage + 2) + "_" + std::to_string(b + 1);
      const std::size_t stride = (b == 0 && stage > 0) ? 2 : 1;
      std::vector<LayerSpec> body = {conv_layer(id + ".conv1", in, mid, 1),
                                     relu_layer(),
                                     conv_layer(id + ".conv2", mid, mid, 3, stride, 1),
                                     relu_layer(),
                                     conv_layer(id + ".conv3", mid, out, 1)};
      std::vector<LayerSpec> shortcut;
      if (b == 0) shortcut.push_back(conv_layer(id + ".proj", in, out, 1, stride));
      a.layers.push_back(residual_block(id, std::move(body), std::move(shortcut)));
      in = out;
    }
  }
  a.layers.push_back(global_avg_pool_layer());
  a.layers.push_back(flatten_layer());
  a.layers.push_back(linear_layer("fc", in, classes, true));
  return a;
}

Architecture resnet_basic(std::size_t in_channels, std::size_t resolution, std::size_t stem_width,
                          const std::vector<BasicBlockPlan>& blocks, std::size_t classes) {
  Architecture a;
  a.name = "resnet_basic";
  a.channels = in_channels;
  a.height = a.width = resolution;
  a.classes = classes;
  a.layers = {conv_layer("stem", in_channels, stem_width, 3, 1, 1), relu_layer()};
  std::size_t in = stem_width;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string id = "block" + std::to_string(b + 1);
    const std::size_t stride = blocks[b].downsample ? 2 : 1;
    const std::size_t w = blocks[b].width;
    std::vector<LayerSpec> body = {conv_layer(id + ".conv1", in, w, 3, stride, 1), relu_layer(),
                                   conv_layer(id + ".conv2", w, w, 3, 1, 1)};
    std::vector<LayerSpec> shortcut;
    if (blocks[b].downsample || w != in) shortcut.push_back(conv_layer(id + ".proj", in, w, 1, stride));
    a.layers.push_back(residual_block(id, std::move(body), std::move(shortcut)));
    in = w;
  }
  a.layers.push_back(global_avg_pool_layer());
  a.layers.push_back(flatten_layer());
  a.layers.push_back(linear_layer("fc", in, classes, true));
  return a;
}

Architecture resnet_toy(std::size_t base_width, std::size_t blocks_per_stage, std::size_t classes,
                        std::size_t in_channels, std::size_t resolution) {
  std::vector<BasicBlockPlan> plan;
  for (std::size_t stage = 0; stage < 3; ++stage)
    for (std::size_t b = 0; b < blocks_per_stage; ++b) plan.push_back({base_width << stage, stage > 0 && b == 0});
  Architecture a = resnet_basic(in_channels, resolution, base_width, plan, classes);
  a.name = "resnet_toy";
  return a;
}

Architecture resnet_bottleneck(std::size_t in_channels, std::size_t resolution, std::size_t stem_width,
                               const std::vector<BottleneckPlan>& blocks, std::size_t classes) {
  Architecture a;
  a.name = "resnet_bottleneck";
  a.channels = in_channels;
  a.height = a.width = resolution;
  a.classes = classes;
  a.layers = {conv_layer("stem", in_channels, stem_width, 3, 1, 1), relu_layer()};
  std::size_t in = stem_width;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string id = "block" + std::to_string(b + 1);
    const BottleneckPlan& p = blocks[b];
    const std::size_t stride = p.downsample ? 2 : 1;
    std::vector<LayerSpec> body = {conv_layer(id + ".conv1", in, p.mid, 1),
                                   relu_layer(),
                                   conv_layer(id + ".conv2", p.mid, p.mid, 3, stride, 1),
                                   relu_layer(),
                                   conv_layer(id + ".conv3", p.mid, p.out, 1)};
    std::vector<LayerSpec> shortcut;
    if (p.downsample || p.out != in) shortcut.push_back(conv_layer(id + ".proj", in, p.out, 1, stride));
    a.layers.push_back(residual_block(id, std::move(body), std::move(shortcut)));
    in = p.out;
  }
  a.layers.push_back(global_avg_pool_layer());
  a.layers.push_back(flatten_layer());
  a.layers.push_back(linear_layer("fc", in, classes, true));
  return a;
}

Architecture resnet_bottleneck_toy(std::size_t classes) {
  Architecture a = resnet_bottleneck(3, 16, 16, {{4, 16, false}, {4, 16, false}, {8, 32, true}, {8, 32, false}}, classes);
  a.name = "resnet_bottleneck_toy";
  return a;
}

}  // namespace rbp::zoo
