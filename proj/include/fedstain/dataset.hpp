#pragma once

#include <string>
#include <vector>

#include "fedstain/image.hpp"

namespace fedstain {

struct Sample {
  ImageTensor image;
  int label = 0;
  std::string sample_id;
};

/// Local data D_i held by one client (or a whole domain before partitioning).
struct ClientDataset {
  std::string client_id;
  std::string domain;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
};

}  // namespace fedstain
