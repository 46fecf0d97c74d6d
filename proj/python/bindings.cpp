#include "bnet/barriernet.hpp"
#include "bnet/config.hpp"
#include "bnet/diffqp.hpp"
#include "bnet/dynamics.hpp"
#include "bnet/harness.hpp"
#include "bnet/hocbf.hpp"
#include "bnet/nominal_mpc.hpp"
#include "bnet/scenario.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

namespace py = pybind11;
using namespace bnet;

namespace {

py::dict qp_solution_dict(const QPSolution& s) {
  py::dict d;
  d["status"] = s.status == QPStatus::Optimal ? "optimal" : s.status == QPStatus::Infeasible ? "infeasible" : "max_iter";
  d["u"] = s.u_star;
  d["duals"] = s.duals;
  d["iterations"] = s.iterations;
  return d;
}

QPProblem make_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& F, const Eigen::MatrixXd& G,
                  const Eigen::VectorXd& h, const std::optional<Eigen::VectorXd>& lb,
                  const std::optional<Eigen::VectorXd>& ub) {
  QPProblem p;
  p.H = H;
  p.F = F;
  p.G = G.size() == 0 ? Eigen::MatrixXd(0, F.size()) : G;
  p.h = h;
  p.lb = lb;
  p.ub = ub;
  return p;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["episodes"] = m.episodes;
  d["crashes"] = m.crashes;
  d["collisions"] = m.collisions;
  d["off_lane"] = m.off_lane;
  d["crash_rate"] = m.crash_rate;
  d["mean_min_clearance"] = m.mean_min_clearance;
  d["min_clearance"] = m.min_clearance;
  d["thresholds"] = m.thresholds;
  d["exceedance"] = m.exceedance;
  d["steps"] = m.steps;
  return d;
}

NoiseConfig noise_from_dict(const py::dict& d) {
  NoiseConfig n;
  for (auto item : d) n[parse_noise_channel(py::str(item.first))] = item.second.cast<double>();
  return n;
}

}  // namespace

PYBIND11_MODULE(bnet, m) {
  m.doc() = "Differentiable HOCBF safety layer, expert MPC and evaluation harness";

  py::class_<VehicleParams>(m, "VehicleParams")
      .def(py::init<>())
      .def_readwrite("l_r", &VehicleParams::l_r)
      .def_readwrite("l_f", &VehicleParams::l_f);

  py::class_<CurvilinearState>(m, "State")
      .def(py::init([](double s, double d, double mu, double v, double delta) {
             return CurvilinearState{s, d, mu, v, delta};
           }),
           py::arg("s") = 0.0, py::arg("d") = 0.0, py::arg("mu") = 0.0, py::arg("v") = 0.0, py::arg("delta") = 0.0)
      .def_readwrite("s", &CurvilinearState::s)
      .def_readwrite("d", &CurvilinearState::d)
      .def_readwrite("mu", &CurvilinearState::mu)
      .def_readwrite("v", &CurvilinearState::v)
      .def_readwrite("delta", &CurvilinearState::delta)
      .def_readwrite("a", &CurvilinearState::a)
      .def_readwrite("omega", &CurvilinearState::omega)
      .def("__repr__", [](const CurvilinearState& x) {
        return "State(s=" + std::to_string(x.s) + ", d=" + std::to_string(x.d) + ", mu=" + std::to_string(x.mu) +
               ", v=" + std::to_string(x.v) + ", delta=" + std::to_string(x.delta) + ")";
      });

  py::class_<Control>(m, "Control")
      .def(py::init([](double a, double omega) { return Control{a, omega}; }), py::arg("a") = 0.0,
           py::arg("omega") = 0.0)
      .def_readwrite("a", &Control::a)
      .def_readwrite("omega", &Control::omega);

  py::class_<ReferencePath>(m, "ReferencePath")
      .def(py::init([](const std::vector<std::pair<double, double>>& segs, double w, bool closed) {
             std::vector<PathSegment> v;
             for (const auto& [len, kappa] : segs) v.push_back(PathSegment{len, kappa});
             return ReferencePath(std::move(v), w, closed);
           }),
           py::arg("segments"),
           py::arg("lane_half_width") = 2.0, py::arg("closed") = false)
      .def_static("straight", &ReferencePath::straight, py::arg("length"), py::arg("lane_half_width") = 2.0)
      .def("length", &ReferencePath::length)
      .def("closed", &ReferencePath::closed)
      .def("curvature_at", &ReferencePath::curvature_at);

  m.def("step_rk4", &step_rk4, py::arg("state"), py::arg("control"), py::arg("path"),
        py::arg("params") = VehicleParams{}, py::arg("dt") = 0.1);
  m.def(
      "global_pose",
      [](const ReferencePath& path, const CurvilinearState& x) {
        const Pose2 p = global_pose(path, x);
        return py::make_tuple(p.x, p.y, p.theta);
      },
      py::arg("path"), py::arg("state"));

  py::class_<BarrierSpec>(m, "BarrierSpec")
      .def_static("obstacle", &BarrierSpec::obstacle, py::arg("s_obs"), py::arg("d_obs"), py::arg("r_D"))
      .def_static("lane_left", &BarrierSpec::lane_left, py::arg("d_lf"))
      .def_static("lane_right", &BarrierSpec::lane_right, py::arg("d_lf"));

  m.def("barrier_value", &barrier_value, py::arg("spec"), py::arg("state"));
  m.def(
      "hocbf_constraint",
      [](const BarrierSpec& spec, const CurvilinearState& x, double p1, double p2, const ReferencePath& path,
         const VehicleParams& vp) {
        const auto row = hocbf_constraint(spec, x, Penalties{p1, p2}, path, vp);
        return py::make_tuple(Eigen::VectorXd(row.coeff), row.constant);
      },
      py::arg("spec"), py::arg("state"), py::arg("p1") = 1.0, py::arg("p2") = 1.0, py::arg("path"),
      py::arg("params") = VehicleParams{},
      "Returns (coeff, constant) of the constraint coeff . u + constant >= 0.");

  m.def(
      "qp_solve",
      [](const Eigen::MatrixXd& H, const Eigen::VectorXd& F, const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
         const std::optional<Eigen::VectorXd>& lb, const std::optional<Eigen::VectorXd>& ub) {
        return qp_solution_dict(qp_solve(make_qp(H, F, G, h, lb, ub)));
      },
      py::arg("H"), py::arg("F"), py::arg("G"), py::arg("h"), py::arg("lb") = py::none(), py::arg("ub") = py::none(),
      "min 0.5 u'Hu + F'u  s.t.  Gu <= h, lb <= u <= ub");
  m.def(
      "qp_backward",
      [](const Eigen::MatrixXd& H, const Eigen::VectorXd& F, const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
         const Eigen::VectorXd& grad_u) {
        const QPProblem p = make_qp(H, F, G, h, std::nullopt, std::nullopt);
        const QPSolution s = qp_solve(p);
        if (s.status != QPStatus::Optimal) throw std::runtime_error("qp_backward: QP not solved");
        const QPGradients g = qp_backward(p, s, grad_u);
        py::dict d;
        d["dH"] = g.dH;
        d["dF"] = g.dF;
        d["dG"] = g.dG;
        d["dh"] = g.dh;
        d["damped"] = g.damped;
        return d;
      },
      py::arg("H"), py::arg("F"), py::arg("G"), py::arg("h"), py::arg("grad_u"));

  py::class_<Footprint>(m, "Footprint")
      .def(py::init([](double s, double d, double length, double width) { return Footprint{s, d, length, width}; }),
           py::arg("s"), py::arg("d"), py::arg("length") = 4.5, py::arg("width") = 1.8)
      .def_readwrite("s", &Footprint::s)
      .def_readwrite("d", &Footprint::d);

  py::class_<ObstacleDisk>(m, "ObstacleDisk")
      .def_readonly("s_obs", &ObstacleDisk::s_obs)
      .def_readonly("d_obs", &ObstacleDisk::d_obs)
      .def_readonly("r_D", &ObstacleDisk::r_D)
      .def_readonly("slot", &ObstacleDisk::slot)
      .def_readonly("parked", &ObstacleDisk::parked);

  m.def(
      "cover_obstacle", [](const Footprint& fp, double w) { return cover_obstacle(fp, w); }, py::arg("footprint"),
      py::arg("lane_half_width") = 2.0);
  m.def(
      "sort_and_slot",
      [](const CurvilinearState& ego, const std::vector<Footprint>& obs, const ReferencePath& path) {
        return sort_and_slot(ego, obs, path);
      },
      py::arg("ego"), py::arg("obstacles"), py::arg("path"));

  m.def(
      "nmpc_solve",
      [](const CurvilinearState& x, const ReferencePath& path, const std::vector<Footprint>& obs) {
        const MPCResult r = nmpc_solve(x, path, obs, MPCConfig{});
        py::dict d;
        d["label"] = py::make_tuple(r.label.a, r.label.omega);
        d["controls"] = r.controls;
        d["cost"] = r.cost;
        d["safe"] = r.safe;
        d["reject_reason"] = r.reject_reason;
        return d;
      },
      py::arg("state"), py::arg("path"), py::arg("obstacles") = std::vector<Footprint>{});

  m.def(
      "generate_dataset",
      [](int episodes, int steps, std::uint64_t seed) {
        DatasetSpec spec;
        spec.episodes = episodes;
        spec.steps = steps;
        MPCConfig cfg;
        cfg.seed = seed;
        const auto data = generate_dataset(spec, cfg);
        Eigen::MatrixXd obs(data.size(), spec.obs.dim()), labels(data.size(), kNumLabels);
        std::vector<std::uint32_t> mask;
        for (std::size_t i = 0; i < data.size(); ++i) {
          obs.row(i) = data[i].obs.transpose();
          for (int f = 0; f < kNumLabels; ++f) labels(i, f) = data[i].labels[f];
          mask.push_back(data[i].mask);
        }
        return py::make_tuple(obs, labels, mask);
      },
      py::arg("episodes"), py::arg("steps"), py::arg("seed") = 1,
      "Returns (observations, labels, mask_bits); label columns follow LABEL_NAMES.");
  m.attr("LABEL_NAMES") = std::vector<std::string>(kLabelNames.begin(), kLabelNames.end());

  py::class_<PolicyNetwork, std::shared_ptr<PolicyNetwork>>(m, "PolicyNetwork")
      .def(py::init([](std::uint64_t seed) { return std::make_shared<PolicyNetwork>(PolicyConfig{}, seed); }),
           py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return std::make_shared<PolicyNetwork>(load_checkpoint(path)); })
      .def("save", [](const PolicyNetwork& net, const std::string& path) { save_checkpoint(net, path); })
      .def_property_readonly("obs_dim", [](const PolicyNetwork& net) { return net.config().obs.dim(); })
      .def(
          "penalties",
          [](const PolicyNetwork& net, const Eigen::VectorXd& obs) {
            const auto h = net.decode(net.run(obs));
            std::vector<std::pair<double, double>> out;
            for (const auto& p : h.penalties) out.emplace_back(p.p1, p.p2);
            return out;
          },
          py::arg("obs"));

  m.def(
      "evaluate",
      [](const std::shared_ptr<PolicyNetwork>& net, const std::string& mode, int episodes, std::uint64_t seed,
         const std::string& scenario, const py::dict& noise) {
        BarrierNetPolicy policy(net, parse_policy_mode(mode));
        ScenarioDistribution dist;
        dist.kind = scenario == "lane_keeping" ? ScenarioKind::LaneKeeping : ScenarioKind::Obstacle;
        RolloutConfig rc;
        rc.noise = noise_from_dict(noise);
        return metrics_dict(evaluate(policy, dist, episodes, seed, rc).metrics);
      },
      py::arg("net"), py::arg("mode") = "exact", py::arg("episodes") = 10, py::arg("seed") = 0,
      py::arg("scenario") = "obstacle", py::arg("noise") = py::dict());

  m.def("two_proportion_p", &two_proportion_p, py::arg("crashes1"), py::arg("n1"), py::arg("crashes2"), py::arg("n2"));
}
