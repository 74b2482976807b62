import init, { analyze, loci, simulate } from "./pkg/gridsync_web.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#0969da", "#cf222e", "#1a7f37", "#8250df", "#9a6700"];
let lociPaths = null;

function showError(e) {
  $("error").textContent = e ? String(e) : "";
}

function axes(ctx, box, xr, yr, xlabel, ylabel) {
  const { w, h, pad } = box;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad / 2, w - 1.5 * pad, h - 1.5 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "12px system-ui";
  ctx.fillText(xlabel, w / 2, h - 6);
  ctx.save();
  ctx.translate(12, h / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(ylabel, 0, 0);
  ctx.restore();
  ctx.fillText(xr[0].toPrecision(3), pad, h - pad + 14);
  ctx.fillText(xr[1].toPrecision(3), w - pad, h - pad + 14);
  ctx.fillText(yr[1].toPrecision(5), 18, pad / 2 + 10);
  ctx.fillText(yr[0].toPrecision(5), 18, h - pad);
  const sx = (x) => pad + ((x - xr[0]) / (xr[1] - xr[0])) * (w - 1.5 * pad);
  const sy = (y) => h - pad - ((y - yr[0]) / (yr[1] - yr[0])) * (h - 1.5 * pad);
  return { sx, sy };
}

function range(values, margin) {
  let lo = Math.min(...values), hi = Math.max(...values);
  if (hi - lo < 1e-12) { lo -= 1; hi += 1; }
  const m = (hi - lo) * margin;
  return [lo - m, hi + m];
}

function drawPlane(current) {
  const c = $("plane"), ctx = c.getContext("2d");
  const pts = [...current.eigenvalues];
  if (lociPaths) lociPaths.forEach((p) => pts.push(...p.eigenvalues));
  const xr = range(pts.map((e) => e.re).concat([0]), 0.1);
  const yr = range(pts.map((e) => e.im), 0.1);
  const { sx, sy } = axes(ctx, { w: c.width, h: c.height, pad: 50 }, xr, yr, "Re λ (1/s)", "Im λ (rad/s)");
  ctx.strokeStyle = "#ccc";
  ctx.beginPath(); ctx.moveTo(sx(0), sy(yr[0])); ctx.lineTo(sx(0), sy(yr[1])); ctx.stroke();
  if (lociPaths) {
    ctx.fillStyle = "#bbb";
    lociPaths.forEach((p) => p.eigenvalues.forEach((e) => ctx.fillRect(sx(e.re) - 1, sy(e.im) - 1, 2, 2)));
  }
  current.eigenvalues.forEach((e, i) => {
    ctx.fillStyle = COLORS[i % COLORS.length];
    ctx.beginPath();
    if (e.class === "internal") ctx.arc(sx(e.re), sy(e.im), 5, 0, 2 * Math.PI);
    else ctx.rect(sx(e.re) - 5, sy(e.im) - 5, 10, 10);
    ctx.fill();
  });
}

function refreshPlane() {
  const m = 10 ** Number($("m-scale").value), d = 10 ** Number($("d-scale").value);
  $("m-val").textContent = `×${m.toPrecision(3)}`;
  $("d-val").textContent = `×${d.toPrecision(3)}`;
  try {
    const r = JSON.parse(analyze(m, d));
    $("verdict").textContent = `${r.verdict} (max Re λ = ${r.max_re.toPrecision(4)})`;
    $("verdict").className = `verdict-${r.verdict}`;
    drawPlane(r);
    showError(null);
  } catch (e) {
    showError(e);
  }
}

function drawTrace(r) {
  const c = $("trace"), ctx = c.getContext("2d");
  const all = r.coi.concat(...r.frequency);
  const xr = [r.times[0], r.times[r.times.length - 1]];
  const yr = range(all, 0.05);
  const { sx, sy } = axes(ctx, { w: c.width, h: c.height, pad: 60 }, xr, yr, "time (s)", "frequency (Hz)");
  const line = (ys, color, width) => {
    ctx.strokeStyle = color; ctx.lineWidth = width; ctx.beginPath();
    ys.forEach((y, k) => (k ? ctx.lineTo(sx(r.times[k]), sy(y)) : ctx.moveTo(sx(r.times[k]), sy(y))));
    ctx.stroke();
  };
  r.frequency.forEach((f, i) => line(f, COLORS[i % COLORS.length], 1));
  line(r.coi, "#000", 2);
  ctx.lineWidth = 1;
  ctx.font = "12px system-ui";
  r.machines.forEach((b, i) => { ctx.fillStyle = COLORS[i % COLORS.length]; ctx.fillText(`bus ${b}`, c.width - 110, 30 + 16 * i); });
  ctx.fillStyle = "#000"; ctx.fillText("center of inertia", c.width - 110, 30 + 16 * r.machines.length);
}

function runSimulation() {
  const table = $("metrics");
  table.innerHTML = "";
  try {
    const r = JSON.parse(simulate($("preset").value, Number($("magnitude").value), Number($("horizon").value), 600));
    drawTrace(r);
    const m = r.metrics, fmt = (x) => (x == null ? "n/a" : Number(x).toPrecision(5));
    [["nadir (Hz)", m.nadir_p], ["rise time (s)", m.t_r], ["peak time (s)", m.t_p], ["settling time (s)", m.t_s]]
      .forEach(([k, v]) => { table.insertRow().innerHTML = `<td>${k}</td><td>${fmt(v)}</td>`; });
    showError(null);
  } catch (e) {
    const ctx = $("trace").getContext("2d");
    ctx.clearRect(0, 0, $("trace").width, $("trace").height);
    showError(e);
  }
}

await init();
$("m-scale").addEventListener("input", refreshPlane);
$("d-scale").addEventListener("input", refreshPlane);
$("loci-btn").addEventListener("click", () => {
  try {
    lociPaths = JSON.parse(loci($("loci-param").value, 0.1, 10, 60)).points;
    refreshPlane();
  } catch (e) { showError(e); }
});
$("loci-clear").addEventListener("click", () => { lociPaths = null; refreshPlane(); });
$("sim-btn").addEventListener("click", runSimulation);
refreshPlane();
runSimulation();
