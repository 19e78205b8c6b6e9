import init, { decompose, lorenz_gini, melly } from "./pkg/dr_decomp_web.js";

const $ = (id) => document.getElementById(id);

function show(out, f) {
  out.classList.remove("err");
  try {
    return f();
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e.message ?? e);
    return null;
  }
}

function numbers(text) {
  return Float64Array.from(text.split(/[\s,;]+/).filter((s) => s.length).map(Number));
}

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
}

const COLORS = ["#000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

function plotCurves(canvas, curves) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 28;
  axes(ctx, w, h, pad);
  const all = curves.flatMap((c) => c.values);
  let lo = Math.min(0, ...all), hi = Math.max(0, ...all);
  if (hi - lo < 1e-9) hi = lo + 1;
  const x = (t) => pad + (t - 0.08) / (0.92 - 0.08) * (w - 2 * pad);
  const y = (v) => h - pad - (v - lo) / (hi - lo) * (h - 2 * pad);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath(); ctx.moveTo(pad, y(0)); ctx.lineTo(w - pad, y(0)); ctx.stroke();
  curves.forEach((c, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.lineWidth = i === 0 ? 2 : 1;
    ctx.beginPath();
    c.argument.forEach((t, k) => (k ? ctx.lineTo(x(t), y(c.values[k])) : ctx.moveTo(x(t), y(c.values[k]))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(c.name, w - pad - 70, pad + 12 + 12 * i);
  });
  ctx.fillStyle = "#555";
  ctx.fillText("quantile effect by level", pad, pad - 8);
}

function plotLorenz(canvas, r) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 20, s = w - 2 * pad;
  axes(ctx, w, h, pad);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath(); ctx.moveTo(pad, h - pad); ctx.lineTo(w - pad, pad); ctx.stroke();
  ctx.strokeStyle = "#1f77b4";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(pad, h - pad);
  r.population.forEach((p, k) => ctx.lineTo(pad + p * s, h - pad - r.lorenz[k] * s));
  ctx.stroke();
  ctx.lineWidth = 1;
}

await init();

$("d-run").onclick = () => {
  const out = $("d-out");
  out.textContent = "running...";
  setTimeout(() =>
    show(out, () => {
      const r = JSON.parse(decompose(+$("d-n").value, BigInt($("d-seed").value), $("d-link").value, $("d-seq").value, $("d-first").checked));
      out.textContent = r.table;
      plotCurves($("d-plot"), r.qe);
    }), 0);
};

$("l-run").onclick = () => {
  const out = $("l-out");
  show(out, () => {
    const r = JSON.parse(lorenz_gini(numbers($("l-values").value), numbers($("l-weights").value)));
    out.textContent = `Gini ${r.gini.toFixed(4)}   mean ${r.mean.toFixed(3)}   sd ${r.sd.toFixed(3)}`;
    plotLorenz($("l-plot"), r);
  });
};

$("m-run").onclick = () => {
  const out = $("m-out");
  out.textContent = "fitting quantile regressions...";
  setTimeout(() =>
    show(out, () => {
      const r = JSON.parse(melly(+$("m-n").value, BigInt($("m-seed").value), +$("m-shift").value, +$("m-levels").value, $("m-het").checked));
      const [c0, c1] = r.report.crossing_rate;
      out.textContent = `${r.table}\ncrossing rate ${(100 * c0).toFixed(2)}% / ${(100 * c1).toFixed(2)}%`;
    }), 0);
};

$("l-run").click();
