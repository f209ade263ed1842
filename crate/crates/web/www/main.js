import init, { theory_curves, simulate, hitting_sample } from "./pkg/dprocess_web.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"];
const PAD = 40;

function field(box, name) {
  return Number(box.querySelector(`[name=${name}]`).value);
}

// Maps data coordinates onto the canvas and draws the axes.
function frame(canvas, xmax, ymax, xlabel) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#888";
  ctx.fillStyle = "#444";
  ctx.font = "12px sans-serif";
  ctx.beginPath();
  ctx.moveTo(PAD, 10);
  ctx.lineTo(PAD, h - PAD);
  ctx.lineTo(w - 10, h - PAD);
  ctx.stroke();
  ctx.fillText("0", PAD - 12, h - PAD + 14);
  ctx.fillText(String(+xmax.toPrecision(3)), w - 50, h - PAD + 14);
  ctx.fillText(String(+ymax.toPrecision(3)), 2, 18);
  ctx.fillText(xlabel, w / 2, h - 8);
  const x = v => PAD + (v / xmax) * (w - PAD - 10);
  const y = v => h - PAD - (v / ymax) * (h - PAD - 10);
  return { ctx, x, y };
}

function line(f, xs, ys, color, dashed = false) {
  const { ctx } = f;
  ctx.strokeStyle = color;
  ctx.setLineDash(dashed ? [5, 4] : []);
  ctx.beginPath();
  xs.forEach((v, k) => (k ? ctx.lineTo(f.x(v), f.y(ys[k])) : ctx.moveTo(f.x(v), f.y(ys[k]))));
  ctx.stroke();
  ctx.setLineDash([]);
}

function report(box, fn) {
  const out = box.querySelector(".out");
  out.classList.remove("err");
  try {
    out.textContent = fn() ?? "";
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e.message ?? e);
  }
}

function plotCurves(box) {
  report(box, () => {
    const r = JSON.parse(theory_curves(field(box, "d"), 400));
    const f = frame(box.querySelector("canvas"), r.t[r.t.length - 1], 1, "t");
    r.s.forEach((col, j) => line(f, r.t, col, COLORS[j % COLORS.length]));
    return r.s.map((_, j) => `s_${j}`).join("  ") + "  (colors in order)";
  });
}

function plotTrajectory(box) {
  report(box, () => {
    const n = field(box, "n");
    const r = JSON.parse(simulate(n, field(box, "d"), BigInt(field(box, "seed")), 200));
    const f = frame(box.querySelector("canvas"), r.steps[r.steps.length - 1], n, "step i");
    r.observed.forEach((col, j) => {
      const c = COLORS[j % COLORS.length];
      line(f, r.steps, col, c);
      line(f, r.steps, r.predicted[j], c, true);
    });
    const hits = r.hitting_times.map((t, l) => `T_${l} = ${t ?? "never"}`).join(", ");
    return `final edges ${r.final_edges}${r.stuck ? " (stuck)" : ""}; ${hits}\nsolid: observed S_j, dashed: n s_j(i/n)`;
  });
}

function plotHitting(box) {
  report(box, () => {
    const r = JSON.parse(hitting_sample(field(box, "n"), field(box, "d"), field(box, "l"),
      field(box, "trials"), BigInt(field(box, "seed"))));
    const v = r.values;
    if (v.length === 0) return `no saturated runs (${r.stuck} stuck)`;
    const xmax = Math.max(4, ...v);
    const bins = 30, width = xmax / bins;
    const counts = new Array(bins).fill(0);
    v.forEach(x => counts[Math.min(bins - 1, Math.floor(x / width))]++);
    const dens = counts.map(c => c / (v.length * width));
    const f = frame(box.querySelector("canvas"), xmax, Math.max(1.05, ...dens), `V_${r.l}`);
    f.ctx.fillStyle = "#9ecae1";
    dens.forEach((h, k) => {
      const x0 = f.x(k * width), x1 = f.x((k + 1) * width);
      f.ctx.fillRect(x0, f.y(h), x1 - x0 - 1, f.y(0) - f.y(h));
    });
    const xs = Array.from({ length: 200 }, (_, k) => (k * xmax) / 199);
    line(f, xs, xs.map(x => Math.exp(-x)), "#d62728");
    return `${v.length} values, ${r.stuck} stuck runs left out; mean ${r.mean.toFixed(4)}, ` +
      `KS distance to Exp(1) ${r.ks_exp.toFixed(4)}\nred: Exp(1) density`;
  });
}

await init();
const handlers = { curves: plotCurves, trajectory: plotTrajectory, hitting: plotHitting };
for (const [id, fn] of Object.entries(handlers)) {
  const box = document.getElementById(id);
  box.querySelector("button").addEventListener("click", () => fn(box));
  fn(box);
}
