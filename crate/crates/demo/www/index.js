import init, { Demo } from "./pkg/clab_demo.js";

const $ = (id) => document.getElementById(id);
let demo;

function paint(canvas, bytes) {
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(bytes), 64, 64), 0, 0);
}

function redraw() {
  paint($("frame"), demo.frame());
  paint($("recon"), demo.reconstruction());
  $("loss").textContent = `r_int = ${demo.intrinsic_reward().toFixed(3)}`;
}

function start() {
  demo = new Demo($("world").value, Number($("seed").value));
  $("log").textContent = "";
  redraw();
}

function act(a) {
  const s = JSON.parse(demo.step(a));
  const seen = s.visible.map((v) => `${v.class} ${(v.coverage * 100).toFixed(1)}%`).join(", ") || "nothing";
  $("log").textContent = `${s.action}: reward ${s.reward}, r_int ${s.r_int.toFixed(3)}, return ${s.episode_return.toFixed(2)}\nsees ${seen}` +
    (s.terminal ? "\nepisode over, reset to continue" : "");
  redraw();
}

await init();
start();
$("reset").onclick = start;
$("world").onchange = start;
$("actions").onclick = (e) => e.target.dataset.a && act(Number(e.target.dataset.a));
$("train").onclick = () => {
  const loss = demo.train(50);
  redraw();
  $("loss").textContent += `  (mse before last step ${loss.toFixed(5)})`;
};
const keys = { ArrowUp: 0, ArrowDown: 1, ArrowLeft: 2, ArrowRight: 3, q: 4, e: 5 };
document.onkeydown = (e) => {
  if (e.key in keys) {
    e.preventDefault();
    act(keys[e.key]);
  }
};
