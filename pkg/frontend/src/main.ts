import { ApiClient } from "./api";
import { AttentionCue } from "./cue";
import { PromptController } from "./state";
import { EventStream } from "./stream";
import { renderPrompt, updateCountdown } from "./widgets";

const app = document.getElementById("app")!;

function joinForm(): void {
  app.textContent = "";
  const form = document.createElement("form");
  form.className = "join-form";
  form.innerHTML = `
    <h1>Join a session</h1>
    <label>Session id <input name="session" required autocomplete="off"></label>
    <label>Observer id <input name="observer" required autocomplete="off"></label>
    <button type="submit">Join</button>
    <p class="error" hidden></p>`;
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(form);
    void join(String(data.get("session")), String(data.get("observer")))
      .catch((err: Error) => {
        const p = form.querySelector<HTMLElement>(".error")!;
        p.hidden = false;
        p.textContent = err.message;
      });
  });
  app.appendChild(form);
}

async function join(sessionId: string, observerId: string): Promise<void> {
  const api = new ApiClient(window.location.origin);
  const token = await api.join(sessionId, observerId);
  const info = await api.getSession(sessionId);
  const cue = new AttentionCue();

  const shell = document.createElement("div");
  shell.className = "session";
  const title = document.createElement("header");
  title.innerHTML = `<h1></h1><button class="cue-toggle"></button>`;
  title.querySelector("h1")!.textContent = info.config.title || sessionId;
  const cueButton = title.querySelector<HTMLButtonElement>(".cue-toggle")!;
  const syncCueLabel = () => {
    cueButton.textContent = cue.enabled ? "cue: on" : "cue: off";
  };
  cueButton.addEventListener("click", () => {
    cue.toggle();
    syncCueLabel();
  });
  syncCueLabel();
  const promptRoot = document.createElement("main");
  shell.appendChild(title);
  shell.appendChild(promptRoot);
  app.textContent = "";
  app.appendChild(shell);

  const controller = new PromptController(
    info.config,
    api.submitter(sessionId, token),
    {
      onChange: () => renderPrompt(promptRoot, controller),
      onNewPrompt: () => cue.play(),
    },
  );
  const stream = new EventStream(
    api.streamUrl(sessionId, token),
    (event) => controller.handleEvent(event),
  );
  stream.connect();
  renderPrompt(promptRoot, controller);
  setInterval(() => updateCountdown(promptRoot, controller), 100);
}

joinForm();
