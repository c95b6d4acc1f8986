// DOM layer. Renders the current controller state into #app and wires the
// audio elements through ClipGate so the choice stays locked until both
// clips have fully played.
import { CollectApi } from './api.js';
import { ClipGate } from './playback.js';
import { SessionController } from './session.js';
const AGE_BANDS = ['<=20s', '30s', '40s', '>=50s'];
const GENDERS = ['male', 'female', 'other/unstated'];
const FAMILIARITY = ['low', 'medium', 'high'];
// placeholder instruction text, to be replaced with the study's wording
const INSTRUCTIONS = 'Listen to both clips in full, then choose the one that sounds more like ' +
    'anime voice acting. There is no right answer; go with your impression.';
function el(tag, attrs = {}, text = '') {
    const node = document.createElement(tag);
    for (const [k, v] of Object.entries(attrs))
        node.setAttribute(k, v);
    if (text)
        node.textContent = text;
    return node;
}
function selectField(label, name, options) {
    const wrap = el('label', { class: 'field' }, label);
    const sel = el('select', { name });
    for (const opt of options)
        sel.appendChild(el('option', { value: opt }, opt));
    wrap.appendChild(sel);
    return wrap;
}
export class RaterApp {
    constructor(api, root) {
        this.api = api;
        this.root = root;
        this.trialPairId = null;
        this.controller = new SessionController(api, () => this.render());
    }
    async boot() {
        const saved = window.localStorage.getItem('stylepref_session');
        if (saved) {
            try {
                await this.controller.resume(saved);
                return;
            }
            catch {
                window.localStorage.removeItem('stylepref_session');
            }
        }
        this.render();
    }
    render() {
        this.root.replaceChildren();
        switch (this.controller.phase) {
            case 'idle':
                this.renderDemographics();
                break;
            case 'trial':
                this.renderTrial();
                break;
            case 'description':
                this.renderDescription();
                break;
            case 'done':
                this.renderDone();
                break;
        }
    }
    renderDemographics() {
        const form = el('form', { class: 'card' });
        form.appendChild(el('h1', {}, 'Listening session'));
        form.appendChild(el('p', {}, INSTRUCTIONS));
        const id = el('label', { class: 'field' }, 'Rater ID');
        id.appendChild(el('input', { name: 'rater_id', required: 'true' }));
        form.appendChild(id);
        form.appendChild(selectField('Age band', 'age_band', AGE_BANDS));
        form.appendChild(selectField('Gender', 'gender', GENDERS));
        form.appendChild(selectField('Familiarity with anime', 'familiarity', FAMILIARITY));
        form.appendChild(el('button', { type: 'submit' }, 'Start'));
        form.addEventListener('submit', async (ev) => {
            ev.preventDefault();
            const data = new FormData(form);
            try {
                await this.controller.start({
                    rater_id: String(data.get('rater_id') ?? ''),
                    age_band: String(data.get('age_band')),
                    gender: String(data.get('gender')),
                    familiarity: String(data.get('familiarity')),
                });
                const sid = this.controller.session?.session_id;
                if (sid)
                    window.localStorage.setItem('stylepref_session', sid);
            }
            catch (err) {
                this.showError(form, err);
            }
        });
        this.root.appendChild(form);
    }
    renderTrial() {
        const c = this.controller;
        const trial = c.trial;
        if (!trial)
            return;
        const card = el('div', { class: 'card' });
        card.appendChild(el('div', { class: 'progress' }, trial.progress));
        const row = el('div', { class: 'clips' });
        const newTrial = this.trialPairId !== trial.pair_id;
        this.trialPairId = trial.pair_id;
        for (const side of ['left', 'right']) {
            const box = el('div', { class: 'clip' });
            box.appendChild(el('h2', {}, side === 'left' ? 'Clip 1' : 'Clip 2'));
            const audio = el('audio', {
                controls: 'true',
                preload: 'auto',
                src: this.api.audioUrl(side === 'left' ? trial.left_audio : trial.right_audio),
            });
            if (newTrial || !(side === 'left' ? c.playedLeft : c.playedRight)) {
                new ClipGate(audio, () => c.markPlayed(side));
            }
            box.appendChild(audio);
            const pick = el('button', { class: c.selection === side ? 'pick selected' : 'pick' }, side === 'left' ? 'Prefer clip 1' : 'Prefer clip 2');
            pick.addEventListener('click', () => c.select(side));
            box.appendChild(pick);
            row.appendChild(box);
        }
        card.appendChild(row);
        const submit = el('button', { class: 'submit' }, c.submitting ? 'Submitting…' : 'Submit choice');
        if (!c.canSubmit())
            submit.setAttribute('disabled', 'true');
        submit.addEventListener('click', () => void c.submit());
        card.appendChild(submit);
        if (!c.playedLeft || !c.playedRight) {
            card.appendChild(el('p', { class: 'hint' }, 'Play both clips to the end to unlock submission.'));
        }
        if (c.error) {
            card.appendChild(el('p', { class: 'error' }, `Submission failed (${c.error}). Press submit to retry.`));
        }
        this.root.appendChild(card);
    }
    renderDescription() {
        const card = el('div', { class: 'card' });
        card.appendChild(el('h1', {}, 'Almost done'));
        card.appendChild(el('p', {}, 'In a few words, what did the voices you preferred have in common?'));
        const text = el('textarea', { rows: '4' });
        card.appendChild(text);
        const btn = el('button', {}, 'Finish');
        btn.addEventListener('click', () => void this.controller.submitDescription(text.value));
        if (this.controller.error) {
            card.appendChild(el('p', { class: 'error' }, this.controller.error));
        }
        card.appendChild(btn);
        this.root.appendChild(card);
    }
    renderDone() {
        window.localStorage.removeItem('stylepref_session');
        const card = el('div', { class: 'card' });
        card.appendChild(el('h1', {}, 'Thank you!'));
        card.appendChild(el('p', {}, 'Your session is complete. You can close this tab.'));
        this.root.appendChild(card);
    }
    showError(parent, err) {
        const msg = err instanceof Error ? err.message : String(err);
        parent.appendChild(el('p', { class: 'error' }, msg));
    }
}
export function main() {
    const root = document.getElementById('app');
    if (!root)
        throw new Error('missing #app element');
    const api = new CollectApi(window.location.origin);
    void new RaterApp(api, root).boot();
}
