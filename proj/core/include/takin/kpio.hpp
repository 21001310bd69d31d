#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "takin/common.hpp"

// Line-delimited text format for keypoint and motion-latent trajectories:
//
//   #takin-kp v1 K=21
//   #meta version=0.1.0 seed=7 config=0011aabbccddeeff kind=latents
//   <frame 0: space-separated decimals, 9 significant digits>
//   ...
//
// One frame per line. kind is one of keypoints (3K values), latents (3K+6),
// landmarks (2N with K=N) or scalar (1).

namespace takin::kpio {

struct KpFile {
  int k = 0;
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<Eigen::VectorXd> frames;
};

std::string format_value(double v);  // %.9g

void write(const std::string& path, int k, const std::string& kind,
           const std::vector<Eigen::VectorXd>& frames,
           const std::map<std::string, std::string>& meta = {});

KpFile read(const std::string& path);

// Audio-feature dump: header "#takin-af v1 L=<L> D=<D>", one 50 Hz frame per
// line with L*D values in layer-major order (L=1 for collapsed features).
void write_features(const std::string& path, int layers, int dims,
                    const std::vector<Eigen::VectorXd>& frames,
                    const std::map<std::string, std::string>& meta = {});

}  // namespace takin::kpio
