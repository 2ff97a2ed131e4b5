/**
 * DOM rendering of the prompt view: radio groups for single-selection,
 * checklists for multiple-selection, a countdown, and the log button.
 * Nothing is ever preselected; state lives in the controller.
 */

import { PromptController } from "./state";

export function renderPrompt(root: HTMLElement, controller: PromptController): void {
  root.textContent = "";
  const view = controller.view;
  if (!view) {
    root.appendChild(el("p", "status", controller.ended
      ? "Session ended."
      : "Waiting for the first prompt..."));
    return;
  }

  const header = el("div", "prompt-header");
  header.appendChild(el("h2", "subject",
    view.subjectName ?? "Choose a subject"));
  header.appendChild(el("span", "prompt-index", `prompt #${view.promptIndex}`));
  const countdown = el("span", "countdown", "");
  countdown.dataset.deadline = view.deadline;
  header.appendChild(countdown);
  root.appendChild(header);

  if (!view.subjectId) {
    root.appendChild(subjectPicker(controller));
  }

  for (const group of controller.config.scheme.groups) {
    const box = el("fieldset", `group group-${group.selection}`);
    box.appendChild(el("legend", "group-name", group.name));
    const chosen = view.selections.get(group.name) ?? new Set<string>();
    for (const label of group.labels) {
      const wrap = el("label", "choice");
      const input = document.createElement("input");
      input.type = group.selection === "single" ? "radio" : "checkbox";
      if (group.selection === "single") input.name = `group-${group.name}`;
      input.value = label;
      input.checked = chosen.has(label);
      input.disabled = view.locked;
      input.addEventListener("click", () => {
        controller.select(group.name, label);
      });
      wrap.appendChild(input);
      wrap.appendChild(el("span", "choice-label", label));
      box.appendChild(wrap);
    }
    root.appendChild(box);
  }

  const actions = el("div", "actions");
  const logButton = document.createElement("button");
  logButton.className = "log-button";
  logButton.textContent = view.submitState === "submitting" ? "Logging..." : "Log";
  logButton.disabled = !controller.canSubmit();
  logButton.addEventListener("click", () => {
    void controller.submit();
  });
  actions.appendChild(logButton);

  const skipButton = document.createElement("button");
  skipButton.className = "skip-button";
  skipButton.textContent = "Skip";
  skipButton.disabled = view.locked || view.submitState !== "idle" || !view.subjectId;
  skipButton.addEventListener("click", () => {
    void controller.skip();
  });
  actions.appendChild(skipButton);
  actions.appendChild(el("span", `submit-state submit-${view.submitState}`,
    stateText(view.submitState)));
  root.appendChild(actions);
}

function subjectPicker(controller: PromptController): HTMLElement {
  const wrap = el("div", "subject-picker");
  const select = document.createElement("select");
  const option = (text: string, value: string) => {
    const node = document.createElement("option");
    node.textContent = text;
    node.value = value;
    return node;
  };
  select.appendChild(option("-- choose --", ""));
  for (const subject of controller.config.roster.subjects) {
    select.appendChild(option(subject.display_name || subject.id, subject.id));
  }
  select.addEventListener("change", () => {
    if (select.value) controller.chooseSubject(select.value);
  });
  wrap.appendChild(select);
  return wrap;
}

export function updateCountdown(root: HTMLElement, controller: PromptController): void {
  const node = root.querySelector<HTMLElement>(".countdown");
  if (!node) return;
  const remaining = controller.remainingMs();
  node.textContent = `${(remaining / 1000).toFixed(1)}s`;
  node.classList.toggle("urgent", remaining < 3000);
}

function stateText(state: string): string {
  switch (state) {
    case "acknowledged": return "logged ✓";
    case "rejected_late": return "too late";
    case "rejected": return "rejected";
    case "missed": return "missed";
    case "submitting": return "";
    default: return "";
  }
}

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}
