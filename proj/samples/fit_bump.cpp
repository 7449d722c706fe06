// Recovers a small Gaussian bump from two survey lines, starting from a flat guess.

#include <cmath>
#include <cstdio>

#include "sssdr/sssdr.hpp"

int main() {
  using namespace sssdr;
  const GridSpec grid = GridSpec::centered(20.0, 1.0, {0.0, 0.0});
  Heightfield truth(grid, -15.0);
  for (std::size_t i = 0; i < grid.nx; ++i)
    for (std::size_t j = 0; j < grid.ny; ++j) {
      const Vec2 p = truth.node_xy(i, j);
      truth.z(i, j) += 2.0 * std::exp(-(p.x * p.x + p.y * p.y) / 8.0);
    }

  SurveySpec survey;
  survey.legs = {{{-8.0, -8.0}, {8.0, -8.0}}, {{8.0, -8.0}, {8.0, 8.0}}};
  survey.sensor_z = -5.0;
  survey.ping_spacing = 1.0;
  survey.tilt = deg2rad(30.0);

  ReconstructProblem prob;
  prob.intr = intrinsics_from_fov(deg2rad(1.0), deg2rad(50.0), 50.0, 256);
  prob.poses = make_survey_lines(survey);
  prob.reference = render_waterfall(heightfield_to_mesh(truth), prob.poses, prob.intr, prob.bp, prob.params);
  prob.spec.image_scale = 1.0 / prob.reference.max();

  OptimConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 0.1;
  const auto result = reconstruct(prob, OptimState::start(make_flat_scene(grid, 15.0)), cfg,
                                  [](const OptimState& s) {
                                    if (s.epoch % 10 == 0)
                                      std::printf("epoch %3zu  loss %.4e\n", s.epoch, s.history.back().total);
                                  });

  const auto m = eval_bathymetry(result.heightfield, truth);
  std::printf("apex %.2f m (truth %.2f m), depth MAE %.3f m\n", m.apex_depth, m.truth_apex_depth, m.mae);
}
