#include "posediff/nn/graph.hpp"

#include <cmath>

namespace posediff::nn {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

template <typename Mat>
Mat gather_nodes(const Mat& src, int batch, int nodes, int cm, int p) {
    // Row (n * nodes + k), column (c * p + pixel).
    Mat g(static_cast<Eigen::Index>(batch) * nodes, static_cast<Eigen::Index>(cm) * p);
    for (int n = 0; n < batch; ++n)
        for (int k = 0; k < nodes; ++k)
            for (int c = 0; c < cm; ++c)
                g.row(static_cast<Eigen::Index>(n) * nodes + k).segment(static_cast<Eigen::Index>(c) * p, p) =
                    src.col(k * cm + c).segment(static_cast<Eigen::Index>(n) * p, p).transpose();
    return g;
}

}  // namespace

template <typename Scalar>
Var Graph<Scalar>::push(const Shape& shape, Mat value) {
    nodes_.push_back({shape, std::move(value), Mat()});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename Scalar>
typename Graph<Scalar>::Mat& Graph<Scalar>::grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
}

template <typename Scalar>
Var Graph<Scalar>::input(const Shape& shape, Mat value) {
    require(value.rows() == shape.rows() && value.cols() == shape.channels, "input value does not match shape");
    return push(shape, std::move(value));
}

template <typename Scalar>
Var Graph<Scalar>::conv2d(Var x, Parameter<Scalar>& weight, Parameter<Scalar>* bias, int kernel, int stride) {
    const Shape in = shape(x);
    const int pad = kernel / 2;
    const int cin = in.channels;
    require(weight.value.rows() == static_cast<Eigen::Index>(kernel) * kernel * cin, "conv weight rows");
    const int cout = static_cast<int>(weight.value.cols());
    if (bias) require(bias->value.rows() == 1 && bias->value.cols() == cout, "conv bias shape");
    Shape out_shape{in.batch, (in.height + 2 * pad - kernel) / stride + 1, (in.width + 2 * pad - kernel) / stride + 1,
                    cout};
    const bool pointwise = kernel == 1 && stride == 1;

    Mat cols;
    if (!pointwise) {
        const Mat& xv = value(x);
        cols.setZero(out_shape.rows(), static_cast<Eigen::Index>(kernel) * kernel * cin);
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                for (int c = 0; c < cin; ++c) {
                    Scalar* dst = cols.col((ky * kernel + kx) * cin + c).data();
                    const Scalar* src = xv.col(c).data();
                    for (int n = 0; n < in.batch; ++n) {
                        for (int oy = 0; oy < out_shape.height; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= in.height) continue;
                            const Scalar* src_row = src + (static_cast<Eigen::Index>(n) * in.height + iy) * in.width;
                            Scalar* dst_row =
                                dst + (static_cast<Eigen::Index>(n) * out_shape.height + oy) * out_shape.width;
                            for (int ox = 0; ox < out_shape.width; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix >= 0 && ix < in.width) dst_row[ox] = src_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Mat out = pointwise ? Mat(value(x) * weight.value) : Mat(cols * weight.value);
    if (bias) out.rowwise() += bias->value.row(0);
    Var y = push(out_shape, std::move(out));

    record([this, x, y, &weight, bias, kernel, stride, pad, in, out_shape, pointwise, cols = std::move(cols)]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        const Mat& patches = pointwise ? nodes_[x.id].value : cols;
        weight.grad.noalias() += patches.transpose() * gy;
        if (bias) bias->grad += gy.colwise().sum();
        if (pointwise) {
            grad_ref(x.id).noalias() += gy * weight.value.transpose();
            return;
        }
        Mat gcols = gy * weight.value.transpose();
        Mat& gx = grad_ref(x.id);
        const int cin = in.channels;
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                for (int c = 0; c < cin; ++c) {
                    const Scalar* src = gcols.col((ky * kernel + kx) * cin + c).data();
                    Scalar* dst = gx.col(c).data();
                    for (int n = 0; n < in.batch; ++n) {
                        for (int oy = 0; oy < out_shape.height; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= in.height) continue;
                            Scalar* dst_row = dst + (static_cast<Eigen::Index>(n) * in.height + iy) * in.width;
                            const Scalar* src_row =
                                src + (static_cast<Eigen::Index>(n) * out_shape.height + oy) * out_shape.width;
                            for (int ox = 0; ox < out_shape.width; ++ox) {
                                const int ix = ox * stride + kx - pad;
                                if (ix >= 0 && ix < in.width) dst_row[ix] += src_row[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::group_norm(Var x, Parameter<Scalar>& gamma, Parameter<Scalar>& beta, int groups, Scalar eps) {
    const Shape s = shape(x);
    if (groups < 1 || s.channels % groups != 0)
        throw Error(ErrorCode::InvalidGrouping, "channels not divisible by group count");
    require(gamma.value.cols() == s.channels && beta.value.cols() == s.channels, "group norm affine shape");
    const int cg = s.channels / groups;
    const int p = s.pixels();
    const Mat& xv = value(x);
    Mat xhat(xv.rows(), xv.cols());
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd(static_cast<Eigen::Index>(s.batch) * groups);
    for (int n = 0; n < s.batch; ++n) {
        for (int g = 0; g < groups; ++g) {
            auto block = xv.block(static_cast<Eigen::Index>(n) * p, static_cast<Eigen::Index>(g) * cg, p, cg);
            const Scalar mean = block.mean();
            const Scalar var = (block.array() - mean).square().mean();
            const Scalar r = Scalar(1) / std::sqrt(var + eps);
            rstd[n * groups + g] = r;
            xhat.block(static_cast<Eigen::Index>(n) * p, static_cast<Eigen::Index>(g) * cg, p, cg) =
                (block.array() - mean) * r;
        }
    }
    Mat out = xhat;
    out.array().rowwise() *= gamma.value.row(0).array();
    out.rowwise() += beta.value.row(0);
    Var y = push(s, std::move(out));

    record([this, x, y, &gamma, &beta, groups, cg, p, s, xhat = std::move(xhat), rstd = std::move(rstd)]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        gamma.grad += (gy.array() * xhat.array()).colwise().sum().matrix();
        beta.grad += gy.colwise().sum();
        Mat gxhat = gy;
        gxhat.array().rowwise() *= gamma.value.row(0).array();
        Mat& gx = grad_ref(x.id);
        for (int n = 0; n < s.batch; ++n) {
            for (int g = 0; g < groups; ++g) {
                const Eigen::Index r0 = static_cast<Eigen::Index>(n) * p;
                const Eigen::Index c0 = static_cast<Eigen::Index>(g) * cg;
                auto dxh = gxhat.block(r0, c0, p, cg).array();
                auto xh = xhat.block(r0, c0, p, cg).array();
                const Scalar m1 = dxh.mean();
                const Scalar m2 = (dxh * xh).mean();
                gx.block(r0, c0, p, cg).array() += rstd[n * groups + g] * (dxh - m1 - xh * m2);
            }
        }
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::silu(Var x) {
    const Mat& xv = value(x);
    Mat sig = (Scalar(1) / (Scalar(1) + (-xv.array()).exp())).matrix();
    Mat out = (xv.array() * sig.array()).matrix();
    Var y = push(shape(x), std::move(out));
    record([this, x, y, sig = std::move(sig)]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        const auto& xv = nodes_[x.id].value.array();
        grad_ref(x.id).array() += gy.array() * (sig.array() * (Scalar(1) + xv * (Scalar(1) - sig.array())));
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::relu(Var x) {
    Mat out = value(x).cwiseMax(Scalar(0));
    Var y = push(shape(x), std::move(out));
    record([this, x, y]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        grad_ref(x.id).array() += (nodes_[x.id].value.array() > Scalar(0)).select(gy.array(), Scalar(0));
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::add(Var a, Var b) {
    require(shape(a) == shape(b), "add operands differ in shape");
    Var y = push(shape(a), value(a) + value(b));
    record([this, a, b, y]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        grad_ref(a.id) += gy;
        grad_ref(b.id) += gy;
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::add_per_sample(Var x, Var v) {
    const Shape s = shape(x);
    const Shape vs = shape(v);
    require(vs.batch == s.batch && vs.pixels() == 1 && vs.channels == s.channels, "per-sample vector shape");
    const int p = s.pixels();
    Mat out = value(x);
    for (int n = 0; n < s.batch; ++n) out.middleRows(static_cast<Eigen::Index>(n) * p, p).rowwise() += value(v).row(n);
    Var y = push(s, std::move(out));
    record([this, x, v, y, s, p]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        grad_ref(x.id) += gy;
        Mat& gv = grad_ref(v.id);
        for (int n = 0; n < s.batch; ++n) gv.row(n) += gy.middleRows(static_cast<Eigen::Index>(n) * p, p).colwise().sum();
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::scale_per_sample(Var x, Var v) {
    const Shape s = shape(x);
    const Shape vs = shape(v);
    require(vs.batch == s.batch && vs.pixels() == 1 && vs.channels == s.channels, "per-sample vector shape");
    const int p = s.pixels();
    Mat out = value(x);
    for (int n = 0; n < s.batch; ++n)
        out.middleRows(static_cast<Eigen::Index>(n) * p, p).array().rowwise() *= (value(v).row(n).array() + Scalar(1));
    Var y = push(s, std::move(out));
    record([this, x, v, y, s, p]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        Mat& gx = grad_ref(x.id);
        Mat& gv = grad_ref(v.id);
        for (int n = 0; n < s.batch; ++n) {
            const Eigen::Index r = static_cast<Eigen::Index>(n) * p;
            gx.middleRows(r, p).array() +=
                gy.middleRows(r, p).array().rowwise() * (value(v).row(n).array() + Scalar(1));
            gv.row(n) += (gy.middleRows(r, p).array() * value(x).middleRows(r, p).array()).matrix().colwise().sum();
        }
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::concat_channels(Var a, Var b) {
    const Shape sa = shape(a), sb = shape(b);
    require(sa.batch == sb.batch && sa.height == sb.height && sa.width == sb.width, "concat spatial shapes differ");
    Mat out(value(a).rows(), sa.channels + sb.channels);
    out << value(a), value(b);
    Shape s = sa;
    s.channels = sa.channels + sb.channels;
    Var y = push(s, std::move(out));
    record([this, a, b, y, ca = sa.channels, cb = sb.channels]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        grad_ref(a.id) += gy.leftCols(ca);
        grad_ref(b.id) += gy.rightCols(cb);
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::upsample2x(Var x) {
    const Shape in = shape(x);
    Shape os{in.batch, in.height * 2, in.width * 2, in.channels};
    const Mat& xv = value(x);
    Mat out(os.rows(), os.channels);
    for (int c = 0; c < in.channels; ++c) {
        for (int n = 0; n < in.batch; ++n) {
            for (int oy = 0; oy < os.height; ++oy) {
                for (int ox = 0; ox < os.width; ++ox) {
                    out((static_cast<Eigen::Index>(n) * os.height + oy) * os.width + ox, c) =
                        xv((static_cast<Eigen::Index>(n) * in.height + oy / 2) * in.width + ox / 2, c);
                }
            }
        }
    }
    Var y = push(os, std::move(out));
    record([this, x, y, in, os]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        Mat& gx = grad_ref(x.id);
        for (int c = 0; c < in.channels; ++c) {
            for (int n = 0; n < in.batch; ++n) {
                for (int oy = 0; oy < os.height; ++oy) {
                    for (int ox = 0; ox < os.width; ++ox) {
                        gx((static_cast<Eigen::Index>(n) * in.height + oy / 2) * in.width + ox / 2, c) +=
                            gy((static_cast<Eigen::Index>(n) * os.height + oy) * os.width + ox, c);
                    }
                }
            }
        }
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::attention(Var q, Var k, Var v) {
    const Shape sq = shape(q), sk = shape(k), sv = shape(v);
    require(sq.batch == sk.batch && sk.batch == sv.batch, "attention batch sizes differ");
    require(sq.channels == sk.channels, "attention query/key widths differ");
    require(sk.pixels() == sv.pixels(), "attention key/value lengths differ");
    const int lq = sq.pixels(), lk = sk.pixels();
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(sq.channels));
    Mat out(sq.rows(), sv.channels);
    std::vector<Mat> probs(static_cast<std::size_t>(sq.batch));
    for (int n = 0; n < sq.batch; ++n) {
        auto qn = value(q).middleRows(static_cast<Eigen::Index>(n) * lq, lq);
        auto kn = value(k).middleRows(static_cast<Eigen::Index>(n) * lk, lk);
        auto vn = value(v).middleRows(static_cast<Eigen::Index>(n) * lk, lk);
        Mat scores = (qn * kn.transpose()) * scale;
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_max = scores.rowwise().maxCoeff();
        scores = (scores.colwise() - row_max).array().exp().matrix();
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_sum = scores.rowwise().sum();
        scores.array().colwise() /= row_sum.array();
        out.middleRows(static_cast<Eigen::Index>(n) * lq, lq).noalias() = scores * vn;
        probs[static_cast<std::size_t>(n)] = std::move(scores);
    }
    Shape os = sq;
    os.channels = sv.channels;
    Var y = push(os, std::move(out));
    record([this, q, k, v, y, lq, lk, scale, batch = sq.batch, probs = std::move(probs)]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        Mat& gq = grad_ref(q.id);
        Mat& gk = grad_ref(k.id);
        Mat& gv = grad_ref(v.id);
        for (int n = 0; n < batch; ++n) {
            const Mat& pn = probs[static_cast<std::size_t>(n)];
            auto qn = nodes_[q.id].value.middleRows(static_cast<Eigen::Index>(n) * lq, lq);
            auto kn = nodes_[k.id].value.middleRows(static_cast<Eigen::Index>(n) * lk, lk);
            auto vn = nodes_[v.id].value.middleRows(static_cast<Eigen::Index>(n) * lk, lk);
            auto gyn = gy.middleRows(static_cast<Eigen::Index>(n) * lq, lq);
            gv.middleRows(static_cast<Eigen::Index>(n) * lk, lk).noalias() += pn.transpose() * gyn;
            Mat gp = gyn * vn.transpose();
            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = (gp.array() * pn.array()).rowwise().sum();
            Mat gs = (pn.array() * (gp.colwise() - dot).array()).matrix() * scale;
            gq.middleRows(static_cast<Eigen::Index>(n) * lq, lq).noalias() += gs * kn;
            gk.middleRows(static_cast<Eigen::Index>(n) * lk, lk).noalias() += gs.transpose() * qn;
        }
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::graph_conv(Var x, const Mat& a_gcn, int nodes, Parameter<Scalar>& weight) {
    const Shape s = shape(x);
    if (nodes < 1 || s.channels % nodes != 0)
        throw Error(ErrorCode::InvalidGrouping, "channel count not divisible by node count");
    require(a_gcn.rows() == nodes && a_gcn.cols() == nodes, "normalised adjacency size");
    const int cm = s.channels / nodes;
    const int p = s.pixels();
    const Eigen::Index features = static_cast<Eigen::Index>(cm) * p;
    require(weight.value.rows() == features && weight.value.cols() == features, "graph conv weight shape");

    auto gather = [batch = s.batch, nodes, cm, p](const Mat& src) {
        return gather_nodes(src, batch, nodes, cm, p);
    };
    const Mat node_features = gather(value(x));
    Mat aggregated(node_features.rows(), features);
    for (int n = 0; n < s.batch; ++n)
        aggregated.middleRows(static_cast<Eigen::Index>(n) * nodes, nodes).noalias() =
            a_gcn * node_features.middleRows(static_cast<Eigen::Index>(n) * nodes, nodes);
    Mat pre = aggregated * weight.value;
    Mat out = value(x);
    for (int n = 0; n < s.batch; ++n)
        for (int k = 0; k < nodes; ++k)
            for (int c = 0; c < cm; ++c)
                out.col(k * cm + c).segment(static_cast<Eigen::Index>(n) * p, p) +=
                    pre.row(static_cast<Eigen::Index>(n) * nodes + k)
                        .segment(static_cast<Eigen::Index>(c) * p, p)
                        .cwiseMax(Scalar(0))
                        .transpose();
    Var y = push(s, std::move(out));
    record([this, x, y, &weight, a_gcn, nodes, cm, p, s, gather, aggregated = std::move(aggregated),
            pre = std::move(pre)]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        Mat gpre = gather(gy);
        gpre = (pre.array() > Scalar(0)).select(gpre.array(), Scalar(0)).matrix();
        weight.grad.noalias() += aggregated.transpose() * gpre;
        Mat gagg = gpre * weight.value.transpose();
        Mat& gx = grad_ref(x.id);
        gx += gy;
        for (int n = 0; n < s.batch; ++n) {
            Mat gnodes = a_gcn.transpose() * gagg.middleRows(static_cast<Eigen::Index>(n) * nodes, nodes);
            for (int k = 0; k < nodes; ++k)
                for (int c = 0; c < cm; ++c)
                    gx.col(k * cm + c).segment(static_cast<Eigen::Index>(n) * p, p) +=
                        gnodes.row(k).segment(static_cast<Eigen::Index>(c) * p, p).transpose();
        }
    });
    return y;
}

template <typename Scalar>
Var Graph<Scalar>::embedding_mean(Parameter<Scalar>& table, std::span<const std::vector<int>> token_ids) {
    const int batch = static_cast<int>(token_ids.size());
    const Eigen::Index dim = table.value.cols();
    Mat out = Mat::Zero(batch, dim);
    for (int n = 0; n < batch; ++n) {
        const auto& ids = token_ids[static_cast<std::size_t>(n)];
        if (ids.empty()) throw Error(ErrorCode::EmptyCaption, "no tokens to embed");
        for (int id : ids) {
            if (id < 0 || id >= table.value.rows())
                throw Error(ErrorCode::UnknownTokenId, "token id " + std::to_string(id));
            out.row(n) += table.value.row(id);
        }
        out.row(n) /= static_cast<Scalar>(ids.size());
    }
    Var y = push(Shape{batch, 1, 1, static_cast<int>(dim)}, std::move(out));
    record([this, y, &table, ids = std::vector<std::vector<int>>(token_ids.begin(), token_ids.end())]() {
        const Mat& gy = nodes_[y.id].grad;
        if (gy.size() == 0) return;
        for (std::size_t n = 0; n < ids.size(); ++n) {
            const Scalar w = Scalar(1) / static_cast<Scalar>(ids[n].size());
            for (int id : ids[n]) table.grad.row(id) += w * gy.row(static_cast<Eigen::Index>(n));
        }
    });
    return y;
}

template <typename Scalar>
void Graph<Scalar>::backward(Var output, const Mat& output_grad) {
    if (!track_) throw Error(ErrorCode::InvalidConfig, "graph built without gradient tracking");
    require(output_grad.rows() == value(output).rows() && output_grad.cols() == value(output).cols(),
            "output gradient shape");
    grad_ref(output.id) += output_grad;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
}

template <typename Scalar>
double Graph<Scalar>::mse_backward(Var prediction, const Mat& target) {
    const Mat& pred = value(prediction);
    require(pred.rows() == target.rows() && pred.cols() == target.cols(), "loss operand shapes differ");
    const Mat diff = pred - target;
    const double n = static_cast<double>(diff.size());
    const double loss = diff.template cast<double>().squaredNorm() / n;
    if (track_) backward(prediction, diff * static_cast<Scalar>(2.0 / n));
    return loss;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace posediff::nn
