import { Goal } from "./api.js";

function goalNode(goal: Goal): HTMLElement {
  const li = document.createElement("li");
  li.className = `goal goal-${goal.status.toLowerCase()}`;
  li.dataset.goalId = goal.id;

  const title = document.createElement("span");
  title.className = "goal-title";
  title.textContent = goal.title;
  li.appendChild(title);

  const status = document.createElement("span");
  status.className = "goal-status";
  status.textContent = goal.status;
  li.appendChild(status);

  const blockers = Array.isArray(goal.blockers) ? goal.blockers : [];
  if (blockers.length) {
    const ul = document.createElement("ul");
    ul.className = "goal-blockers";
    for (const b of blockers) {
      const entry = document.createElement("li");
      entry.textContent = `blocked: ${b}`;
      ul.appendChild(entry);
    }
    li.appendChild(ul);
  }
  return li;
}

export function renderGoalTree(root: HTMLElement, sessionGoals: Goal[],
                               persistentGoals: Goal[]): void {
  root.innerHTML = "";
  const sections: Array<[string, Goal[]]> = [
    ["Persistent", persistentGoals],
    ["Session", sessionGoals],
  ];
  for (const [label, goals] of sections) {
    const section = document.createElement("section");
    section.className = `goal-section goal-section-${label.toLowerCase()}`;
    const h = document.createElement("h3");
    h.textContent = `${label} goals (${goals.length})`;
    section.appendChild(h);
    const ul = document.createElement("ul");
    ul.className = "goal-tree";
    for (const goal of goals) ul.appendChild(goalNode(goal));
    section.appendChild(ul);
    root.appendChild(section);
  }
}
